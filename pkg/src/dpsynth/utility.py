"""Downstream-classifier utility under four checkpoint-selection protocols.

``testfix``   fixed epoch count, no selection.
``senv``      best test accuracy; reads the test split to select, so it is not DP.
``synv``      best accuracy on a held-out slice of the synthetic data.
``noisy_senv`` report-noisy-max over validation correct counts at ``eps_val``;
              train and validation data are disjoint, so the total is
              ``max(eps_train, eps_val)``.

All four protocols share one training trajectory per seed: the classifier is
always fit on the same 90% of the synthetic set, so selectors differ only in
which snapshot they pick.
"""
from dataclasses import dataclass, field

import numpy as np

from .accountant import PureDP, parallel_compose
from .dataio import ensure_splits
from .errors import ValidationError
from .mechanisms import report_noisy_max
from .rng import SeededRng
from .tinynn import MlpSpec, batch_loss_grad, forward, init_checkpoint

PROTOCOLS = ("testfix", "senv", "synv", "noisy_senv")
SYNV_FRACTION = 0.1


@dataclass(frozen=True)
class ProtocolConfig:
    protocol: str = "noisy_senv"
    eps_val: float = None
    fixed_epochs: int = 10
    checkpoint_stride: int = 1
    epochs: int = 10
    lr: float = 0.2
    batch_size: int = 64
    noiseless: bool = False

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"protocol must be one of {PROTOCOLS}")
        if self.protocol == "noisy_senv" and not self.noiseless and not (self.eps_val and self.eps_val > 0):
            raise ValidationError("noisy_senv needs eps_val > 0 (or noiseless=True)")
        if self.fixed_epochs < 1 or self.checkpoint_stride < 1 or self.epochs < 1:
            raise ValidationError("epoch counts and stride must be >= 1")


@dataclass
class UtilityResult:
    protocol: str
    selected_step: int
    test_accuracy: float
    val_counts_released: bool
    eps_total: float
    dp_violating: bool = False
    laplace_seed: list = None
    events: list = field(default_factory=list)

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "selected_step": self.selected_step,
            "test_accuracy": self.test_accuracy,
            "val_counts_released": self.val_counts_released,
            "eps_total": self.eps_total,
            "dp_violating": self.dp_violating,
            "laplace_seed": self.laplace_seed,
        }


def classifier_spec(d, K, hidden=(64,)):
    return MlpSpec((d, *hidden, K), "relu", "softmax")


def correct_count(ckpt, ds):
    pred = np.argmax(forward(ckpt, ds.flat()), axis=1)
    return int(np.sum(pred == ds.labels))


def accuracy(ckpt, ds):
    """Exact fraction of correctly classified records."""
    if len(ds) == 0:
        raise ValidationError("accuracy of an empty slice is undefined")
    return correct_count(ckpt, ds) / len(ds)


def train_snapshots(train, clf_spec, epochs, stride, lr, batch_size, rng):
    """Plain minibatch SGD; returns ``[(epoch, checkpoint), ...]`` every ``stride`` epochs."""
    ckpt = init_checkpoint(clf_spec, rng.spawn(51))
    X, y = train.flat(), train.labels
    params = ckpt.params
    snaps = []
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = perm[start:start + batch_size]
            _, g = batch_loss_grad(type(ckpt)(params, clf_spec), X[idx], y[idx], "cross_entropy")
            params = params - lr * g
        if epoch % stride == 0 or epoch == epochs:
            snaps.append((epoch, type(ckpt)(params, clf_spec, epoch, None, {})))
    return snaps


def run_protocols(syn, sensitive, clf_spec, rng, eps_train=None, eps_val=None, noiseless=False,
                  epochs=10, fixed_epochs=None, stride=1, lr=0.2, batch_size=64):
    """Every protocol's result from one training run, keyed by protocol name.

    ``noisy_senv`` is left out when neither ``eps_val`` nor ``noiseless`` is given.
    """
    ensure_splits(sensitive)
    if len(syn) < 2:
        raise ValidationError("synthetic set needs at least two records")
    fixed_epochs = min(fixed_epochs or epochs, epochs)
    perm = rng.spawn(52).permutation(len(syn))
    n_hold = max(1, int(round(SYNV_FRACTION * len(syn))))
    syn_val, syn_train = syn.subset(perm[:n_hold]), syn.subset(perm[n_hold:])
    snaps = train_snapshots(syn_train, clf_spec, epochs, stride, lr, batch_size, rng)
    val, test = sensitive.part("val"), sensitive.part("test")
    eps_t = float("inf") if eps_train is None else eps_train
    steps = [s for s, _ in snaps]
    by_step = dict(snaps)

    def test_acc(step):
        return accuracy(by_step[step], test)

    out = {}
    fixed = max(s for s in steps if s <= fixed_epochs) if any(s <= fixed_epochs for s in steps) else steps[0]
    out["testfix"] = UtilityResult("testfix", fixed, test_acc(fixed), False, eps_t)

    test_accs = [test_acc(s) for s in steps]
    best = int(np.argmax(test_accs))
    out["senv"] = UtilityResult("senv", steps[best], test_accs[best], True, eps_t, dp_violating=True)

    syn_accs = [accuracy(c, syn_val) for _, c in snaps]
    pick = steps[int(np.argmax(syn_accs))]
    out["synv"] = UtilityResult("synv", pick, test_acc(pick), False, eps_t)

    if eps_val is None and not noiseless:
        # no validation budget given, so the private selector is not run
        return out
    counts = [correct_count(c, val) for _, c in snaps]
    lap_rng = rng.spawn(53)
    if noiseless:
        win = report_noisy_max(counts, np.inf, noiseless=True)
        eps_v = 0.0
    else:
        win = report_noisy_max(counts, eps_val, lap_rng)
        eps_v = eps_val
    res = UtilityResult("noisy_senv", steps[win], test_acc(steps[win]), False,
                        parallel_compose(eps_t, eps_v), laplace_seed=[lap_rng.seed, lap_rng.stream])
    res.events.append(PureDP(eps_v))
    out["noisy_senv"] = res
    return out


def train_eval_classifier(syn, sensitive, clf_spec, cfg, rng, eps_train=None):
    """Train on synthetic data and select a checkpoint under ``cfg.protocol``."""
    results = run_protocols(syn, sensitive, clf_spec, rng, eps_train, cfg.eps_val, cfg.noiseless,
                            max(cfg.epochs, cfg.fixed_epochs), cfg.fixed_epochs, cfg.checkpoint_stride,
                            cfg.lr, cfg.batch_size)
    return results[cfg.protocol]


def protocol_comparison(syn, sensitive, clf_spec, seeds, eps_train=None, eps_val=None, **train_kw):
    """Mean/std test accuracy per protocol over ``seeds`` plus the SenV gaps."""
    if len(seeds) < 2:
        raise ValidationError("protocol comparison needs at least two seeds")
    per_seed = []
    for seed in seeds:
        res = run_protocols(syn, sensitive, clf_spec, SeededRng(seed, stream=0xACC), eps_train, eps_val, **train_kw)
        per_seed.append({p: r.test_accuracy for p, r in res.items()})
    table = {}
    for p in PROTOCOLS:
        accs = np.array([row[p] for row in per_seed])
        table[p] = {"mean": float(accs.mean()), "std": float(accs.std(ddof=1))}
    table["gap_senv_noisy_senv"] = [row["senv"] - row["noisy_senv"] for row in per_seed]
    table["gap_senv_synv"] = [row["senv"] - row["synv"] for row in per_seed]
    table["per_seed"] = per_seed
    return table
