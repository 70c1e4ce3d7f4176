"""Config-driven experiment runs: prepare, pretrain, train, synth, eval, report.

A run lives in ``<exp_dir>/<run_id>/`` with ``config.json``, ``ledger.json``,
``checkpoints/``, ``synthetic/``, ``metrics.json`` and ``log.txt``. The run id
is a short hash of the config snapshot and seed, so repeated runs land in the
same directory and reuse finished stages. Public pretraining is cached under
``<exp_dir>/_cache`` keyed by its own inputs and shared across privacy sweeps.
"""
import copy
import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .accountant import AccountantLedger, Gaussian, PrivacySpec, calibrate_gaussian_sigma, delta_default
from .dataio import Dataset, ensure_splits, load_dataset, save_dataset
from .embeddings import RffMap, median_bandwidth
from .errors import BudgetError, ValidationError
from .fidelity import FeatureExtractor, fidelity_report
from .fixtures import _BUNDLED, load_bundled
from .rng import SeededRng
from .synthesizers import (
    NoiseSchedule,
    denoiser_spec,
    dpdmlite_train,
    dpfeta_train,
    dpmerf_train,
    generate_diffusion,
    generate_merf,
    generator_spec,
    jitter_variation,
    pe_synthesize,
    pretrain,
    privimage_select,
    train_classifier,
    uniform_api,
)
from .tinynn import DPSGD_NORMALIZATION, DpSgdConfig, load_checkpoint, save_checkpoint
from .utility import PROTOCOLS, classifier_spec, run_protocols

STAGES = ("prepare", "pretrain", "train", "synth", "eval")
ERROR_MARKER = "ERROR"
DPSGD_METHODS = ("dpdm-lite", "dp-feta", "privimage")

_DIFFUSION = {
    "hidden": [64],
    "T": 100,
    "beta_start": 1e-4,
    "beta_end": 0.2,
    "batch_size": 64,
    "steps": 200,
    "lr": 0.5,
    "C": 1.0,
    "k_mult": 32,
    "sigma": None,
    "pretrain": None,
}
METHOD_DEFAULTS = {
    "dp-merf": {
        "D": 200,
        "bandwidth": None,
        "iters": 500,
        "lr": 1e-2,
        "hidden": [64, 64],
        "noise_dim": 5,
        "notion": "add_remove_unknown_m",
        "sigma": None,
        "n_per_class": 100,
    },
    "dpdm-lite": dict(_DIFFUSION),
    "dp-feta": dict(_DIFFUSION, n_central=1, central_fraction=0.1, pixel_clip=4.0, central_iters=300,
                    central_lr=1e-3),
    "pe": {
        "n_candidates": 200,
        "T_pe": 8,
        "sigma_hist": None,
        "threshold_H": None,
        "variation_scale": 0.1,
        "variation_decay": 0.6,
    },
    "privimage": dict(_DIFFUSION, k_frac=0.05, selection_fraction=0.1, query_hidden=[64], query_iters=400,
                      pretrain={"mode": "unconditional", "iters": 500, "lr": 1e-3, "batch_size": 128}),
}
PRETRAIN_DEFAULTS = {"mode": "conditional", "iters": 500, "lr": 1e-3, "batch_size": 128, "k_mult": 4}
EVAL_DEFAULTS = {
    "n_synthetic": 500,
    "extractor": "raw_pixels",
    "extractor_D": 512,
    "protocols": list(PROTOCOLS),
    "eps_val": None,
    "classifier": {"hidden": [64], "epochs": 10, "lr": 0.2, "batch_size": 64},
    "fidelity_k": 3,
}
TOP_KEYS = {"name", "method", "seed", "data", "privacy", "method_config", "eval", "sweep"}

# independent RNG streams per stage so cached and fresh runs draw identically
_STREAM = {"pretrain": 101, "train": 102, "synth": 103, "eval": 104, "bandwidth": 105}


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def short_hash(obj, n=12):
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:n]


def _json_safe(obj):
    """Replace non-finite floats by strings so files stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _parse_epsilon(value):
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity")):
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"epsilon must be a number or 'inf', got {value!r}")
    if not value > 0:
        raise ValidationError(f"epsilon must be > 0, got {value}")
    return float(value) if math.isfinite(value) else None


def _merge(defaults, given, where):
    given = given or {}
    unknown = set(given) - set(defaults)
    if unknown:
        raise ValidationError(f"unknown {where} keys: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


@dataclass
class ExperimentConfig:
    method: str
    sensitive: object
    public: object = None
    epsilon: float = None
    delta: object = "auto"
    method_config: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    seed: int = 0
    name: str = ""
    sweep: dict = None

    def __post_init__(self):
        if self.method not in METHOD_DEFAULTS:
            raise ValidationError(f"unknown method {self.method!r}; registered: {sorted(METHOD_DEFAULTS)}")
        if self.delta != "auto" and not (isinstance(self.delta, (int, float)) and 0 < self.delta < 1):
            raise ValidationError(f"delta must be 'auto' or in (0, 1), got {self.delta!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        self.method_config = _merge(METHOD_DEFAULTS[self.method], self.method_config, "method_config")
        if self.method_config.get("pretrain") is not None:
            self.method_config["pretrain"] = _merge(PRETRAIN_DEFAULTS, self.method_config["pretrain"],
                                                    "pretrain")
            if self.public is None:
                raise ValidationError("pretraining needs a public dataset")
            if self.method == "dp-feta":
                raise ValidationError("dp-feta warm-starts from its central images, not public pretraining")
        if self.method == "privimage" and self.public is None:
            raise ValidationError("privimage needs a public dataset")
        ev = _merge(EVAL_DEFAULTS, self.eval, "eval")
        ev["classifier"] = _merge(EVAL_DEFAULTS["classifier"], ev["classifier"], "eval.classifier")
        bad = set(ev["protocols"]) - set(PROTOCOLS)
        if bad:
            raise ValidationError(f"unknown protocols {sorted(bad)}")
        self.eval = ev

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(data) - TOP_KEYS
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("method", "data"):
            if key not in data:
                raise ValidationError(f"config is missing {key!r}")
        dat = data["data"]
        if not isinstance(dat, dict) or "sensitive" not in dat:
            raise ValidationError("config.data needs a 'sensitive' entry")
        priv = data.get("privacy", {})
        return cls(method=data["method"], sensitive=dat["sensitive"], public=dat.get("public"),
                   epsilon=_parse_epsilon(priv.get("epsilon")), delta=priv.get("delta", "auto"),
                   method_config=data.get("method_config"), eval=data.get("eval"), seed=data.get("seed", 0),
                   name=data.get("name", ""), sweep=data.get("sweep"))

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        return {
            "name": self.name,
            "method": self.method,
            "seed": self.seed,
            "data": {"sensitive": self.sensitive, "public": self.public},
            "privacy": {"epsilon": "inf" if self.epsilon is None else self.epsilon, "delta": self.delta},
            "method_config": self.method_config,
            "eval": self.eval,
        }

    def with_overrides(self, seed=None, epsilon="keep"):
        out = copy.deepcopy(self)
        if seed is not None:
            out.seed = int(seed)
        if epsilon != "keep":
            out.epsilon = _parse_epsilon(epsilon)
        out.__post_init__()
        return out

    @property
    def run_id(self):
        return short_hash(self.to_dict())


@dataclass
class ExperimentRecord:
    run_id: str
    run_dir: str
    config: dict
    ledger: AccountantLedger
    metrics: dict
    wall_clock: dict
    artifacts: dict


def resolve_dataset(ref, base_dir="."):
    """A bundled fixture name, ``{"bundled": name}``, a directory path or ``{"path": p}``."""
    if isinstance(ref, dict):
        if "bundled" in ref:
            ref = ref["bundled"]
        elif "path" in ref:
            return load_dataset(os.path.join(base_dir, ref["path"]))
        else:
            raise ValidationError(f"dataset reference needs 'bundled' or 'path': {ref!r}")
    if not isinstance(ref, str):
        raise ValidationError(f"bad dataset reference {ref!r}")
    if ref in _BUNDLED:
        return load_bundled(ref)
    if os.path.isdir(os.path.join(base_dir, ref)):
        return load_dataset(os.path.join(base_dir, ref))
    raise ValidationError(f"dataset {ref!r} is neither bundled nor a directory")


class Run:
    """Stage graph for one config and seed."""

    def __init__(self, cfg, exp_dir="exp", base_dir="."):
        self.cfg = cfg
        self.exp_dir = exp_dir
        self.base_dir = base_dir
        self.run_id = cfg.run_id
        self.dir = os.path.join(exp_dir, self.run_id)
        self.timing = {}
        self._data = None
        os.makedirs(os.path.join(self.dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(self.dir, "synthetic"), exist_ok=True)
        self.log = logging.getLogger(f"dpsynth.run.{self.run_id}")
        self.log.setLevel(logging.INFO)
        self.log.propagate = False
        log_path = os.path.abspath(os.path.join(self.dir, "log.txt"))
        if not any(getattr(h, "baseFilename", None) == log_path for h in self.log.handlers):
            handler = logging.FileHandler(log_path)
            handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
            self.log.addHandler(handler)

    def close(self):
        for h in list(self.log.handlers):
            h.close()
            self.log.removeHandler(h)

    def path(self, *parts):
        return os.path.join(self.dir, *parts)

    def rng(self, stage):
        return SeededRng(self.cfg.seed, stream=_STREAM[stage])

    @property
    def mc(self):
        return self.cfg.method_config

    # data

    def data(self):
        if self._data is None:
            sens = resolve_dataset(self.cfg.sensitive, self.base_dir)
            ensure_splits(sens)
            pub = resolve_dataset(self.cfg.public, self.base_dir) if self.cfg.public is not None else None
            if pub is not None and pub.shape != sens.shape:
                raise ValidationError(f"public shape {pub.shape} differs from sensitive {sens.shape}")
            self._data = (sens, pub)
        return self._data

    @property
    def train_set(self):
        return self.data()[0].part("train")

    @property
    def delta(self):
        if self.cfg.delta == "auto":
            return delta_default(len(self.train_set))
        return float(self.cfg.delta)

    @property
    def target(self):
        return None if self.cfg.epsilon is None else PrivacySpec(self.cfg.epsilon, self.delta)

    def _timed(self, stage, fn):
        t0 = time.perf_counter()
        self.log.info("stage %s start", stage)
        out = fn()
        self.timing[stage] = time.perf_counter() - t0
        self.log.info("stage %s done in %.2fs", stage, self.timing[stage])
        return out

    # stages

    def prepare(self):
        def go():
            sens, pub = self.data()
            snap = dict(self.cfg.to_dict(), resolved={"delta": self.delta, "N_train": len(self.train_set),
                                                      "shape": list(sens.shape), "K": sens.K,
                                                      "public_K": None if pub is None else pub.K})
            _write_json(self.path("config.json"), snap)
            return snap
        return self._timed("prepare", go)

    def _sched(self):
        return NoiseSchedule.linear(self.mc["T"], self.mc["beta_start"], self.mc["beta_end"])

    def _denoiser_spec(self):
        return denoiser_spec(self.train_set.dim, self.train_set.K, hidden=tuple(self.mc["hidden"]))

    def _pretrain_source(self, ledger=None):
        sens, pub = self.data()
        if self.cfg.method != "privimage":
            return pub, None
        # selection reads the sensitive set; it is a ledger event of its own
        clf = train_classifier(pub, hidden=tuple(self.mc["query_hidden"]), iters=self.mc["query_iters"],
                               rng=self.rng("pretrain").spawn(1))
        sigma_sel = 0.0
        if self.target is not None:
            sigma_sel = calibrate_gaussian_sigma(PrivacySpec(self.mc["selection_fraction"] * self.target.epsilon,
                                                             self.delta))
        subset, top = privimage_select(pub, self.train_set, clf, self.mc["k_frac"], sigma_sel,
                                       self.rng("train").spawn(3), ledger)
        return subset, [int(c) for c in top]

    def pretrain(self, ledger=None):
        """Public warm start, cached across runs by its inputs; ``None`` when not configured."""
        pcfg = self.mc.get("pretrain")
        if pcfg is None:
            return None

        def go():
            source, top = self._pretrain_source(ledger)
            key = short_hash({"public": self.cfg.public, "pretrain": pcfg, "spec": self._denoiser_spec().to_dict(),
                              "T": self.mc["T"], "beta": [self.mc["beta_start"], self.mc["beta_end"]],
                              "selected": top, "seed": self.cfg.seed})
            cache = os.path.join(self.exp_dir, "_cache", f"pretrain-{key}")
            if os.path.exists(cache + ".json"):
                self.log.info("pretrain cache hit %s", key)
                return load_checkpoint(cache)
            ckpt = pretrain(self._denoiser_spec(), source, pcfg["mode"], self._sched(), self.train_set.K,
                            iters=pcfg["iters"], batch_size=pcfg["batch_size"], lr=pcfg["lr"],
                            k_mult=pcfg["k_mult"], rng=self.rng("pretrain"))
            save_checkpoint(ckpt, cache)
            return load_checkpoint(cache)
        return self._timed("pretrain", go)

    def _guard(self, ledger):
        if self.target is None:
            return
        spent = ledger.epsilon(self.delta)
        if spent > self.target.epsilon:
            raise BudgetError(f"ledger epsilon {spent:.6g} exceeds target {self.target.epsilon:.6g} "
                              f"at delta {self.delta:.3g}")

    def train(self):
        """Private training; writes the checkpoint (or PE samples) and ledger.json, then checks the budget."""
        model = self.path("checkpoints", "model")
        if os.path.exists(self.path("ledger.json")) and os.path.exists(model + ".json"):
            ledger = AccountantLedger.load(self.path("ledger.json"))
            self._guard(ledger)
            return ledger
        self.prepare()
        ledger = AccountantLedger()
        init = self.pretrain(ledger)

        def go():
            self._train_method(ledger, init, model)
            ledger.dump(self.path("ledger.json"))
            self._guard(ledger)
            return ledger
        return self._timed("train", go)

    def _train_method(self, ledger, init, model):
        m, mc, rng, train = self.cfg.method, self.mc, self.rng("train"), self.train_set
        if m == "dp-merf":
            bw = mc["bandwidth"]
            _, pub = self.data()
            if bw is None or bw == "public":
                # data-independent default: uniform points on the unit cube
                ref = pub.flat() if (bw == "public" and pub is not None) else \
                    self.rng("bandwidth").uniform((500, train.dim))
                bw = median_bandwidth(ref, rng=self.rng("bandwidth"))
            fmap = RffMap.draw(train.dim, mc["D"], float(bw), rng.spawn(11))
            spec = generator_spec(train.dim, train.K, mc["noise_dim"], tuple(mc["hidden"]))
            ckpt = dpmerf_train(train, fmap, self.target, spec, iters=mc["iters"], rng=rng, ledger=ledger,
                                sigma=mc["sigma"], notion=mc["notion"], n_per_class=mc["n_per_class"],
                                lr=mc["lr"])
            ckpt.meta["bandwidth"] = float(bw)
            save_checkpoint(ckpt, model)
        elif m == "pe":
            self._train_pe(ledger, model, rng)
        else:
            q = min(1.0, mc["batch_size"] / len(train))
            cfg = DpSgdConfig(mc["C"], mc["sigma"], q, mc["lr"], mc["steps"])
            if m == "dp-feta":
                ckpt = dpfeta_train(train, self._sched(), self.target, self._denoiser_spec(), cfg, mc["k_mult"],
                                    mc["n_central"], mc["central_fraction"], mc["pixel_clip"],
                                    mc["central_iters"], mc["central_lr"], rng=rng, ledger=ledger)
            else:
                ckpt = dpdmlite_train(train, self._sched(), self.target, self._denoiser_spec(), cfg,
                                      mc["k_mult"], rng=rng, ledger=ledger, init=init)
            save_checkpoint(ckpt, model)

    def _train_pe(self, ledger, model, rng):
        mc, train = self.mc, self.train_set
        sigma = mc["sigma_hist"]
        if sigma is None:
            sigma = 0.0 if self.target is None else calibrate_gaussian_sigma(self.target, releases=mc["T_pe"])
        # one candidate pool per class: together they form a single histogram of sensitivity 1
        pools, labels = [], []
        X = train.flat()
        for k in range(train.K):
            own = X[train.labels == k]
            st = pe_synthesize(own, mc["n_candidates"], mc["T_pe"], sigma, mc["threshold_H"], rng.spawn(20 + k),
                               variation_api=jitter_variation(mc["variation_scale"], mc["variation_decay"]),
                               random_api=uniform_api(train.dim))
            pools.append(st.candidates)
            labels.append(np.full(len(st.candidates), k))
        for t in range(1, mc["T_pe"] + 1):
            ledger.append(Gaussian(sigma, 1), label=f"pe histogram {t}")
        pool = Dataset(np.concatenate(pools).reshape(-1, *train.shape).astype(np.float32),
                       np.concatenate(labels), train.K)
        save_dataset(pool, self.path("checkpoints", "pe_pool"))
        with open(model + ".json", "w") as fh:
            json.dump({"kind": "pe_pool", "sigma_hist": sigma}, fh, sort_keys=True)

    def synth(self):
        out_dir = self.path("synthetic", "data")
        if os.path.exists(os.path.join(out_dir, "manifest.json")):
            self.train()
            return load_dataset(out_dir)
        self.train()

        def go():
            n, train, rng = self.cfg.eval["n_synthetic"], self.train_set, self.rng("synth")
            model = self.path("checkpoints", "model")
            if self.cfg.method == "pe":
                pool = load_dataset(self.path("checkpoints", "pe_pool"))
                idx = rng.permutation(len(pool))[:n]
                syn = pool.subset(np.sort(idx))
                syn = Dataset(syn.images, syn.labels, syn.K)
            else:
                ckpt = load_checkpoint(model)
                labels = np.arange(n) % train.K
                if self.cfg.method == "dp-merf":
                    X, labels = generate_merf(ckpt, n, rng, labels)
                else:
                    X = generate_diffusion(ckpt, self._sched(), n, labels, rng)
                syn = Dataset(X.reshape(n, *train.shape).astype(np.float32), labels, train.K)
            save_dataset(syn, out_dir)
            return load_dataset(out_dir)
        return self._timed("synth", go)

    def evaluate(self):
        syn = self.synth()
        ledger = AccountantLedger.load(self.path("ledger.json"))
        # ledger before metrics: nothing is written for an over-budget run
        self._guard(ledger)

        def go():
            sens, _ = self.data()
            ev, rng = self.cfg.eval, self.rng("eval")
            real = sens.part("test")
            judge = train_classifier(self.train_set, hidden=tuple(ev["classifier"]["hidden"]), rng=rng.spawn(1))
            if ev["extractor"] == "rff":
                bw = median_bandwidth(real.flat(), rng=rng.spawn(2))
                extractor = FeatureExtractor("rff", fmap=RffMap.draw(real.dim, ev["extractor_D"], bw, rng.spawn(3)))
            elif ev["extractor"] == "classifier_penultimate":
                extractor = FeatureExtractor("classifier_penultimate", ckpt=judge)
            else:
                extractor = FeatureExtractor(ev["extractor"])
            fid = fidelity_report(real.flat(), syn.flat(), extractor, classifier=judge, k=ev["fidelity_k"])
            eps_spent = ledger.epsilon(self.delta)
            eps_t = math.inf if self.target is None else self.target.epsilon
            eps_val = ev["eps_val"] if ev["eps_val"] is not None else eps_t
            clf = ev["classifier"]
            results = run_protocols(syn, sens, classifier_spec(sens.dim, sens.K, tuple(clf["hidden"])),
                                    rng.spawn(4), eps_train=eps_t, eps_val=eps_val,
                                    noiseless=not math.isfinite(eps_val), epochs=clf["epochs"], lr=clf["lr"],
                                    batch_size=clf["batch_size"])
            metrics = {
                "run_id": self.run_id,
                "method": self.cfg.method,
                "seed": self.cfg.seed,
                "epsilon_target": eps_t,
                "delta": self.delta,
                "epsilon_spent": eps_spent,
                "ledger_events": len(ledger),
                "dpsgd_normalization": DPSGD_NORMALIZATION if self.cfg.method in DPSGD_METHODS else None,
                "n_synthetic": len(syn),
                **{k: fid[k] for k in ("fid", "is_proxy", "precision", "recall", "extractor", "fld",
                                        "image_reward")},
                "utility": {p: results[p].to_dict() for p in ev["protocols"]},
            }
            metrics = json.loads(json.dumps(_json_safe(metrics)))
            _write_json(self.path("metrics.json"), metrics)
            return metrics
        return self._timed("eval", go)


def run_experiment(cfg, exp_dir="exp", until="eval", base_dir="."):
    """Run the stage graph up to ``until`` and return an :class:`ExperimentRecord`.

    Any stage error leaves the partial run directory plus an ``ERROR`` marker.
    """
    if until not in STAGES:
        raise ValidationError(f"unknown stage {until!r}")
    run = Run(cfg, exp_dir, base_dir)
    marker = run.path(ERROR_MARKER)
    if os.path.exists(marker):
        os.remove(marker)
    t0 = time.perf_counter()
    metrics, ledger = None, None
    try:
        if until == "prepare":
            run.prepare()
        elif until == "pretrain":
            run.prepare()
            if cfg.method == "privimage":
                # public selection reads the sensitive set, so it only runs as part of training
                run.train()
            else:
                run.pretrain()
        elif until == "train":
            ledger = run.train()
        elif until == "synth":
            run.synth()
        else:
            metrics = run.evaluate()
        if os.path.exists(run.path("ledger.json")):
            ledger = AccountantLedger.load(run.path("ledger.json"))
    except Exception as exc:
        with open(marker, "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        run.log.error("run failed: %s: %s", type(exc).__name__, exc)
        run.close()
        raise
    run.timing["total"] = time.perf_counter() - t0
    run.log.info("timing %s", _canonical(run.timing))
    run.close()
    artifacts = {name: run.path(name) for name in ("config.json", "ledger.json", "metrics.json", "log.txt",
                                                   "checkpoints", "synthetic") if os.path.exists(run.path(name))}
    return ExperimentRecord(run.run_id, run.dir, cfg.to_dict(), ledger, metrics, dict(run.timing), artifacts)


REPORT_COLUMNS = ("method", "epsilon_target", "epsilon_spent", "fid", "is_proxy", "precision", "recall",
                  *(f"acc_{p}" for p in PROTOCOLS), "seed", "run_id")


def _row(metrics):
    need = ("method", "epsilon_target", "epsilon_spent", "fid", "is_proxy", "precision", "recall", "utility",
            "seed", "run_id")
    missing = [k for k in need if k not in metrics]
    if missing:
        raise ValidationError(f"metrics record is missing {missing}")
    row = {k: metrics[k] for k in need if k != "utility"}
    for p in PROTOCOLS:
        row[f"acc_{p}"] = metrics["utility"].get(p, {}).get("test_accuracy")
    return row


def _eps_key(v):
    return math.inf if v in ("inf", None) else float(v)


def emit_report(records, out_prefix):
    """Write ``<out_prefix>.csv`` and ``<out_prefix>.md``; rows sorted by method then epsilon."""
    if not records:
        raise ValidationError("report needs at least one record")
    rows = []
    for rec in records:
        metrics = rec.metrics if isinstance(rec, ExperimentRecord) else rec
        if not isinstance(metrics, dict):
            raise ValidationError("record has no metrics")
        rows.append(_row(metrics))
    rows.sort(key=lambda r: (r["method"], _eps_key(r["epsilon_target"]), r["seed"], r["run_id"]))
    os.makedirs(os.path.dirname(os.path.abspath(out_prefix)), exist_ok=True)
    with open(out_prefix + ".csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r[k] is None else r[k]) for k in REPORT_COLUMNS})

    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)

    lines = ["| " + " | ".join(REPORT_COLUMNS) + " |", "|" + "---|" * len(REPORT_COLUMNS)]
    lines += ["| " + " | ".join(fmt(r[k]) for k in REPORT_COLUMNS) + " |" for r in rows]
    lines += ["", "is_proxy uses the judge classifier on every dataset; it says little on non-natural images.",
              "acc_senv selects on the test split and is not differentially private."]
    with open(out_prefix + ".md", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return out_prefix + ".csv", out_prefix + ".md"


def collect_metrics(exp_dir):
    """Every ``metrics.json`` directly under ``exp_dir``, in run-id order."""
    out = []
    if not os.path.isdir(exp_dir):
        return out
    for name in sorted(os.listdir(exp_dir)):
        p = os.path.join(exp_dir, name, "metrics.json")
        if os.path.exists(p):
            with open(p) as fh:
                out.append(json.load(fh))
    return out


def sweep(cfg, exp_dir="exp", base_dir="."):
    """Run every (epsilon, seed) in ``cfg.sweep`` and write ``<exp_dir>/report``."""
    spec = cfg.sweep or {}
    eps_list = spec.get("epsilon", ["inf" if cfg.epsilon is None else cfg.epsilon])
    seeds = spec.get("seeds", [cfg.seed])
    records = []
    for eps in eps_list:
        for seed in seeds:
            records.append(run_experiment(cfg.with_overrides(seed=seed, epsilon=eps), exp_dir, base_dir=base_dir))
    emit_report(records, os.path.join(exp_dir, "report"))
    return records
