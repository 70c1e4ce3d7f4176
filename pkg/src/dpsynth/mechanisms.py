"""Randomized release primitives: Gaussian and Laplace noise, report-noisy-max, L2 clipping.

Also home to :func:`dppromise_reconstruct`, which inverts a forward diffusion
sample when the noise and step are known. It exists to show that releasing
``(x_t, e, t)`` is not a private release of ``x_0``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import SingularityError, ValidationError
from .rng import SeededRng


@dataclass(frozen=True)
class GaussianNoiseSpec:
    """L2 sensitivity of the released statistic and the noise multiplier."""

    sensitivity: float
    sigma: float

    def __post_init__(self):
        if not (self.sensitivity >= 0 and self.sigma >= 0):
            raise ValidationError(f"sensitivity and sigma must be >= 0, got {self}")

    @property
    def std(self):
        return self.sensitivity * self.sigma


def gaussian_mechanism(v, spec, rng):
    """Return ``v + N(0, (sensitivity * sigma)^2 I)``."""
    v = np.asarray(v, dtype=np.float64)
    if spec.std == 0.0:
        return v.copy()
    return v + spec.std * rng.normal(v.shape)


def laplace_counts(c, epsilon, rng):
    """Add i.i.d. Lap(1/epsilon) noise to each count (sensitivity-1 histogram)."""
    if not epsilon > 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon}")
    c = np.asarray(c, dtype=np.float64)
    return c + rng.laplace(1.0 / epsilon, c.shape)


def report_noisy_max(c, epsilon, rng=None, noiseless=False):
    """Index of the largest ``c_i + Lap(1/epsilon)``; lowest index wins ties.

    ``noiseless=True`` is the epsilon -> infinity limit (plain argmax, no rng needed).
    """
    c = np.asarray(c, dtype=np.float64)
    if c.size == 0:
        raise ValidationError("report_noisy_max needs at least one score")
    if noiseless or np.isinf(epsilon):
        return int(np.argmax(c))
    noisy = laplace_counts(c, epsilon, rng)
    return int(np.argmax(noisy))


def clip_l2(g, clip):
    """Scale ``g`` by ``min(1, clip / ||g||)``."""
    if not clip > 0:
        raise ValidationError(f"clip bound must be > 0, got {clip}")
    g = np.asarray(g, dtype=np.float64)
    norm = np.linalg.norm(g)
    if norm <= clip:
        return g.copy()
    return g * (clip / norm)


def clip_rows(G, clip):
    """Row-wise :func:`clip_l2` for a ``[B, P]`` matrix of per-example vectors."""
    if not clip > 0:
        raise ValidationError(f"clip bound must be > 0, got {clip}")
    G = np.asarray(G, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", G, G))
    scale = np.minimum(1.0, clip / np.maximum(norms, np.finfo(float).tiny))
    return G * scale[:, None]


def dppromise_reconstruct(x_t, e, t, sched):
    """Recover ``x_0 = (x_t - e * sqrt(1 - abar_t)) / sqrt(abar_t)``.

    ``sched`` is anything exposing ``alphabar_at(t)``.
    """
    abar = float(sched.alphabar_at(t))
    if abar <= 0.0:
        raise SingularityError(f"alphabar_{t} = {abar}; x_0 is not recoverable")
    x_t = np.asarray(x_t, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    return (x_t - e * np.sqrt(1.0 - abar)) / np.sqrt(abar)


__all__ = [
    "GaussianNoiseSpec",
    "SeededRng",
    "clip_l2",
    "clip_rows",
    "dppromise_reconstruct",
    "gaussian_mechanism",
    "laplace_counts",
    "report_noisy_max",
]
