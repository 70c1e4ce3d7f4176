"""Random Fourier features, kernel mean embeddings and their sensitivity.

Features pair cosines and sines of the same frequencies, so every feature
vector has unit norm exactly and the mean-embedding sensitivity bounds hold
without clipping.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import SizeError, ValidationError
from .mechanisms import GaussianNoiseSpec, gaussian_mechanism

NOTIONS = ("replace_one", "add_remove_unknown_m", "add_remove_known_m")
MAX_PAIRS = 10**7


@dataclass(frozen=True)
class RffMap:
    """Frequencies ``W`` of shape ``[D/2, d]`` for a Gaussian kernel of length-scale ``bandwidth``."""

    W: np.ndarray
    bandwidth: float

    @classmethod
    def draw(cls, d, D, bandwidth, rng):
        if D % 2 or D < 2:
            raise ValidationError(f"feature dimension must be even and >= 2, got {D}")
        if not bandwidth > 0:
            raise ValidationError(f"bandwidth must be > 0, got {bandwidth}")
        W = rng.normal((D // 2, d)) / bandwidth
        return cls(W, float(bandwidth))

    @property
    def D(self):
        return 2 * self.W.shape[0]

    @property
    def d(self):
        return self.W.shape[1]


def rff_features(x, fmap):
    """``phi(x) = sqrt(2/D) [cos(W x), sin(W x)]`` for a vector or a ``[N, d]`` batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x.reshape(len(x), -1)
    if X.shape[1] != fmap.d:
        raise ValidationError(f"input dim {X.shape[1]} does not match map dim {fmap.d}")
    proj = X @ fmap.W.T
    phi = np.concatenate([np.cos(proj), np.sin(proj)], axis=1) * math.sqrt(2.0 / fmap.D)
    return phi[0] if single else phi


def rff_backprop(X, fmap, grad_phi):
    """Gradient w.r.t. inputs ``X [N, d]`` given upstream gradients on ``phi(X)``."""
    proj = X @ fmap.W.T
    h = fmap.D // 2
    s = math.sqrt(2.0 / fmap.D)
    g = (-grad_phi[:, :h] * np.sin(proj) + grad_phi[:, h:] * np.cos(proj)) * s
    return g @ fmap.W


def median_bandwidth(public, max_points=500, rng=None):
    """Median pairwise distance of (up to ``max_points``) public rows."""
    P = np.asarray(public, dtype=np.float64).reshape(len(public), -1)
    if len(P) > max_points:
        idx = rng.permutation(len(P))[:max_points] if rng is not None else np.arange(max_points)
        P = P[idx]
    diff = P[:, None, :] - P[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(len(P), k=1)
    med = float(np.median(dist[iu]))
    if med <= 0:
        raise ValidationError("public points are all identical; bandwidth undefined")
    return med


@dataclass(frozen=True)
class MeanEmbedding:
    """Mean feature vector ``mu`` over ``m`` records, optionally per class."""

    mu: np.ndarray
    m: int
    per_class: np.ndarray = None
    class_counts: np.ndarray = None

    @property
    def D(self):
        return self.mu.shape[0]


def _features(data, fmap):
    if hasattr(data, "labels"):
        return rff_features(data.flat(), fmap), np.asarray(data.labels), data.K
    F = np.asarray(data, dtype=np.float64)
    if len(F) == 0:
        raise ValidationError("cannot embed an empty set")
    if fmap is not None:
        F = rff_features(F.reshape(len(F), -1), fmap)
    return F, None, None


def _ordered_mean(F):
    # math.fsum per column: the result does not depend on how rows were batched
    return np.array([math.fsum(col) for col in F.T]) / len(F)


def mean_embedding(data, fmap=None):
    """Mean of ``phi(x_i)``; class means too when ``data`` is a labelled Dataset.

    ``data`` may also be a precomputed ``[N, D]`` feature array (``fmap=None``).
    """
    F, labels, K = _features(data, fmap)
    if len(F) == 0:
        raise ValidationError("cannot embed an empty set")
    mu = _ordered_mean(F)
    if labels is None:
        return MeanEmbedding(mu, len(F))
    counts = np.bincount(labels, minlength=K)
    per_class = np.zeros((K, F.shape[1]))
    for k in range(K):
        if counts[k]:
            per_class[k] = _ordered_mean(F[labels == k])
    return MeanEmbedding(mu, len(F), per_class, counts)


def sensitivity_mean_embedding(m, notion):
    """L2 sensitivity of a mean of ``m`` unit-norm features.

    ``2/m`` when neighbours replace a record or add/remove one with the size
    unknown; ``1/m`` when the size is known (add/remove).
    """
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    if notion not in NOTIONS:
        raise ValidationError(f"unknown neighbouring notion {notion!r}")
    return (1.0 if notion == "add_remove_known_m" else 2.0) / m


def _mean(rows, denom, dim):
    return np.sum(rows, axis=0) / denom if len(rows) else np.zeros(dim)


def _neighbour_pairs(n_alpha, m, notion):
    multisets = itertools.combinations_with_replacement(range(n_alpha), m)
    if notion == "replace_one":
        for ms in multisets:
            for pos in range(m):
                if pos and ms[pos] == ms[pos - 1]:
                    continue
                for new in range(n_alpha):
                    if new != ms[pos]:
                        yield ms, ms[:pos] + (new,) + ms[pos + 1:]
    else:
        for ms in multisets:
            for pos in range(m):
                if pos and ms[pos] == ms[pos - 1]:
                    continue
                yield ms[:pos] + ms[pos + 1:], ms


def count_neighbour_pairs(n_alpha, m, notion):
    multisets = math.comb(n_alpha + m - 1, m)
    if notion == "replace_one":
        return multisets * m * max(n_alpha - 1, 0)
    return multisets * m


def brute_force_sensitivity(alphabet, m, notion):
    """Largest mean-embedding change over all neighbouring datasets drawn from ``alphabet``.

    Datasets are multisets of alphabet entries. ``replace_one`` compares two
    size-``m`` sets differing in one record; the add/remove notions compare a
    size ``m-1`` set with a size-``m`` superset, dividing by the true sizes
    (unknown m) or by ``m`` for both (known m). The empty mean is zero.

    Returns ``(max_diff, (D, D'))`` with the witness as lists of alphabet rows.
    """
    A = np.asarray(alphabet, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if np.any(np.linalg.norm(A, axis=1) > 1 + 1e-12):
        raise ValidationError("alphabet vectors must have norm <= 1")
    if notion not in NOTIONS:
        raise ValidationError(f"unknown neighbouring notion {notion!r}")
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    if count_neighbour_pairs(len(A), m, notion) > MAX_PAIRS:
        raise SizeError(f"{count_neighbour_pairs(len(A), m, notion)} pairs exceed guard {MAX_PAIRS}")
    dim = A.shape[1]
    best, witness = 0.0, (tuple(), tuple())
    for small, big in _neighbour_pairs(len(A), m, notion):
        if notion == "replace_one":
            da, db = m, m
        elif notion == "add_remove_known_m":
            da, db = m, m
        else:
            da, db = max(len(small), 1), len(big)
        diff = np.linalg.norm(_mean(A[list(small)], da, dim) - _mean(A[list(big)], db, dim))
        if diff > best:
            best, witness = float(diff), (small, big)
    return best, ([A[i].tolist() for i in witness[0]], [A[i].tolist() for i in witness[1]])


def noisy_mean_embedding(data, fmap, sigma, notion, rng):
    """Gaussian release of the mean embedding (and class means, each scaled by its own count).

    A record sits in exactly one class, so one noise multiplier covers the
    whole per-class matrix when each row's noise uses that row's sensitivity.
    """
    emb = mean_embedding(data, fmap)
    mu = gaussian_mechanism(emb.mu, GaussianNoiseSpec(sensitivity_mean_embedding(emb.m, notion), sigma), rng)
    per_class = None
    if emb.per_class is not None:
        per_class = np.zeros_like(emb.per_class)
        for k, mk in enumerate(emb.class_counts):
            if mk:
                spec = GaussianNoiseSpec(sensitivity_mean_embedding(int(mk), notion), sigma)
                per_class[k] = gaussian_mechanism(emb.per_class[k], spec, rng)
    return MeanEmbedding(mu, emb.m, per_class, emb.class_counts)


def mmd2(a, b):
    """Plug-in MMD^2: squared distance between mean embeddings (or feature sets)."""
    mu_a = a.mu if isinstance(a, MeanEmbedding) else _ordered_mean(np.atleast_2d(np.asarray(a, dtype=float)))
    mu_b = b.mu if isinstance(b, MeanEmbedding) else _ordered_mean(np.atleast_2d(np.asarray(b, dtype=float)))
    if mu_a.shape != mu_b.shape:
        raise ValidationError(f"embedding dims differ: {mu_a.shape} vs {mu_b.shape}")
    d = mu_a - mu_b
    return float(d @ d)
