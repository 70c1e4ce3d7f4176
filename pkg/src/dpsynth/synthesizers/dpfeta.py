"""DP-FETA: noisy per-class central images as a warm start, then DP-SGD fine-tuning."""
from dataclasses import dataclass

import numpy as np

from ..accountant import Gaussian, PrivacySpec, calibrate_gaussian_sigma
from ..dataio import Dataset
from ..errors import GroupingError, ValidationError
from ..guard import release_point
from ..mechanisms import clip_rows
from .diffusion import dpdmlite_train, pretrain

# central images queried per dataset in the reference benchmark
DEFAULT_CENTRAL_IMAGES = {"eurosat": 10, "mnist": 50, "fmnist": 50, "cifar10": 50, "celeba": 500, "camelyon": 500}


@dataclass(frozen=True)
class CentralImages:
    """``per_class[k]`` holds the ``n_central`` noisy group means of class k, flattened."""

    per_class: np.ndarray
    counts: np.ndarray
    clip: float
    sigma: float

    def as_dataset(self, shape):
        K, n, _ = self.per_class.shape
        images = np.clip(self.per_class.reshape(K * n, *shape), 0.0, 1.0)
        return Dataset(images, np.repeat(np.arange(K), n), K)


def dpfeta_central(sensitive, n_central, pixel_clip=None, sigma=None, target=None, fraction=0.1,
                   rng=None, ledger=None):
    """Release ``n_central`` noisy group-mean images per class.

    Each class is shuffled and cut into ``n_central`` groups; images are L2
    clipped to ``pixel_clip`` before averaging and group g gets noise of std
    ``pixel_clip / m_g * sigma``. Groups are disjoint, so this is one Gaussian
    release. ``sigma=None`` calibrates it to ``fraction * target.epsilon``.
    """
    if n_central < 1:
        raise ValidationError(f"n_central must be >= 1, got {n_central}")
    d = sensitive.dim
    clip = float(pixel_clip) if pixel_clip is not None else float(np.sqrt(d))
    if sigma is None:
        sigma = 0.0 if target is None else calibrate_gaussian_sigma(
            PrivacySpec(fraction * target.epsilon, target.delta))
    K = sensitive.K
    out = np.zeros((K, n_central, d))
    counts = np.zeros((K, n_central), dtype=np.int64)
    with release_point("central images"):
        X = clip_rows(sensitive.flat(), clip)
        labels = sensitive.labels
        for k in range(K):
            idx = np.flatnonzero(labels == k)
            if len(idx) < n_central:
                raise GroupingError(f"class {k} has {len(idx)} records < {n_central} groups")
            idx = idx[rng.permutation(len(idx))]
            for g, members in enumerate(np.array_split(idx, n_central)):
                counts[k, g] = len(members)
                mean = X[members].mean(axis=0)
                std = clip / len(members) * sigma
                out[k, g] = mean + std * rng.normal(d) if std > 0 else mean
    if ledger is not None:
        ledger.append(Gaussian(sigma, 1), label="central images")
    return CentralImages(out, counts, clip, sigma)


def dpfeta_train(sensitive, sched, target, spec, cfg, k_mult=32, n_central=1, central_fraction=0.1,
                 pixel_clip=None, central_iters=300, central_lr=1e-3, rng=None, ledger=None):
    """Warm-start on central images, then :func:`dpdmlite_train` under the remaining budget.

    Both releases go into ``ledger``; the DP-SGD multiplier is calibrated so the
    joint ledger meets ``target``. ``central_fraction=0`` is plain DPDM-lite.
    """
    if central_fraction == 0:
        return dpdmlite_train(sensitive, sched, target, spec, cfg, k_mult, rng, ledger)
    if not 0 < central_fraction < 1:
        raise ValidationError(f"central budget fraction must be in [0, 1), got {central_fraction}")
    central = dpfeta_central(sensitive, n_central, pixel_clip, None, target, central_fraction, rng.spawn(31),
                             ledger)
    warm = pretrain(spec, central.as_dataset(sensitive.shape), "conditional", sched, sensitive.K,
                    iters=central_iters, lr=central_lr, rng=rng.spawn(32))
    ckpt = dpdmlite_train(sensitive, sched, target, spec, cfg, k_mult, rng, ledger, init=warm)
    return type(ckpt)(ckpt.params, ckpt.spec, ckpt.step, ckpt.rng_state,
                      dict(ckpt.meta, central_sigma=central.sigma, n_central=n_central))
