"""``dpsynth`` command line.

Exit codes: 0 success, 2 validation error, 3 privacy budget violation.
"""
import argparse
import json
import os
import sys

from .accountant import AccountantLedger
from .audits import AUDITS, run_audits
from .errors import BudgetError, CalibrationError, ValidationError
from .pipeline import ExperimentConfig, _json_safe, collect_metrics, emit_report, run_experiment, sweep

EXIT_OK, EXIT_VALIDATION, EXIT_BUDGET = 0, 2, 3
STAGE_COMMANDS = ("prepare", "pretrain", "train", "synth", "eval")
DEFAULT_DELTAS = (1e-3, 1e-4, 1e-5, 1e-6)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage already; keep that as the validation code
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)


def build_parser():
    p = _Parser(prog="dpsynth", description="Differentially private data synthesis experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in STAGE_COMMANDS + ("report", "sweep"):
        s = sub.add_parser(name, help=f"run the {name} stage" if name in STAGE_COMMANDS else None)
        s.add_argument("--config", required=name != "report", help="experiment config (JSON)")
        s.add_argument("--seed", type=int, default=None, help="override the config seed")
        s.add_argument("--exp-dir", default="exp", help="root directory for run folders")
    a = sub.add_parser("account", help="print epsilon per delta for a JSON ledger")
    a.add_argument("--ledger", help="ledger.json path")
    a.add_argument("--config", help="config whose run ledger to read (alternative to --ledger)")
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--exp-dir", default="exp")
    a.add_argument("--delta", type=float, action="append", help="delta value (repeatable)")
    au = sub.add_parser("audit", help="run the analytical audits and print JSON")
    au.add_argument("--only", choices=sorted(AUDITS), default=None)
    return p


def _load_config(args):
    cfg = ExperimentConfig.load(args.config)
    return cfg.with_overrides(seed=args.seed) if args.seed is not None else cfg


def _base_dir(args):
    return os.path.dirname(os.path.abspath(args.config)) if args.config else "."


def _cmd_stage(args):
    cfg = _load_config(args)
    rec = run_experiment(cfg, args.exp_dir, until=args.command, base_dir=_base_dir(args))
    out = {"run_id": rec.run_id, "run_dir": rec.run_dir, "stage": args.command}
    if rec.ledger is not None and len(rec.ledger):
        out["events"] = len(rec.ledger)
    if rec.metrics is not None:
        out["metrics"] = os.path.join(rec.run_dir, "metrics.json")
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def _cmd_report(args):
    if args.config:
        cfg = _load_config(args)
        run_experiment(cfg, args.exp_dir, base_dir=_base_dir(args))
    records = collect_metrics(args.exp_dir)
    if not records:
        raise ValidationError(f"no metrics.json found under {args.exp_dir}")
    csv_path, md_path = emit_report(records, os.path.join(args.exp_dir, "report"))
    print(json.dumps({"csv": csv_path, "markdown": md_path, "rows": len(records)}, sort_keys=True))
    return EXIT_OK


def _cmd_sweep(args):
    cfg = _load_config(args)
    records = sweep(cfg, args.exp_dir, base_dir=_base_dir(args))
    print(json.dumps({"runs": [r.run_id for r in records], "report": os.path.join(args.exp_dir, "report.csv")},
                     sort_keys=True))
    return EXIT_OK


def _cmd_account(args):
    if args.ledger:
        path = args.ledger
    elif args.config:
        path = os.path.join(args.exp_dir, _load_config(args).run_id, "ledger.json")
    else:
        raise ValidationError("account needs --ledger or --config")
    try:
        ledger = AccountantLedger.load(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"cannot read ledger {path}: {exc}") from exc
    for delta in args.delta or DEFAULT_DELTAS:
        eps = ledger.epsilon(delta)
        print(json.dumps(_json_safe({"delta": delta, "epsilon": eps})))
    return EXIT_OK


def _cmd_audit(args):
    reports = run_audits(args.only)
    print(json.dumps(_json_safe([r.to_dict() for r in reports]), indent=2, sort_keys=True))
    return EXIT_OK if all(r.passed for r in reports) else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = {"report": _cmd_report, "sweep": _cmd_sweep, "account": _cmd_account, "audit": _cmd_audit}.get(
        args.command, _cmd_stage)
    try:
        return handler(args)
    except BudgetError as exc:
        print(f"budget violation: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValidationError, CalibrationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
