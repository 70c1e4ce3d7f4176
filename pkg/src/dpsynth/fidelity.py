"""Fidelity metrics on feature vectors: Frechet distance, an Inception-Score proxy, precision/recall."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .embeddings import rff_features
from .errors import ValidationError
from .tinynn import forward, hidden_features

COV_RIDGE = 1e-6
EIG_CLAMP = 1e-8
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class GaussianFit:
    mu: np.ndarray
    sigma: np.ndarray
    regularized: bool = False


def fit_gaussian(features, ridge_if_wide=True):
    """Sample mean and (N-1)-normalized covariance; adds ``1e-6 I`` when D > N."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or len(F) < 2:
        raise ValidationError("fit_gaussian needs an [N, D] array with N >= 2")
    mu = F.mean(axis=0)
    C = F - mu
    cov = C.T @ C / (len(F) - 1)
    cov = 0.5 * (cov + cov.T)
    wide = ridge_if_wide and F.shape[1] > len(F)
    if wide:
        cov = cov + COV_RIDGE * np.eye(F.shape[1])
    return GaussianFit(mu, cov, wide)


def _psd_sqrt(S):
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    w = np.where(w < EIG_CLAMP, np.maximum(w, 0.0), w)
    return (V * np.sqrt(w)) @ V.T


def frechet_distance(a, b):
    """``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The trace term uses ``Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))``, which is
    symmetric PSD and has the same trace as ``(S_a S_b)^(1/2)``.
    """
    if a.mu.shape != b.mu.shape:
        raise ValidationError(f"feature dims differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    ra = _psd_sqrt(a.sigma)
    w = np.linalg.eigvalsh(ra @ b.sigma @ ra)
    w = np.where(w < EIG_CLAMP, np.maximum(w, 0.0), w)
    cross = np.sqrt(w).sum()
    return float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * cross)


def inception_score_proxy(probs):
    """``exp(mean_n KL(p(y|x_n) || mean_n p(y|x_n)))``."""
    P = np.asarray(probs, dtype=np.float64)
    if P.ndim != 2 or len(P) == 0:
        raise ValidationError("probabilities must be a nonempty [N, K] array")
    if np.any(P < -1e-12) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("every row must be a probability vector")
    P = np.clip(P, 0.0, None)
    marginal = P.mean(axis=0)
    # floor only inside the logs, so zero-probability entries contribute exactly 0
    kl = np.sum(P * (np.log(np.maximum(P, PROB_FLOOR)) - np.log(np.maximum(marginal, PROB_FLOOR))), axis=1)
    return float(np.exp(kl.mean()))


def precision_recall(real_f, syn_f, k=3, threshold=None):
    """Generative precision and recall.

    A synthetic point is a true positive when its nearest real point lies
    within that real point's radius; recall swaps the roles. Radii are the
    distance to the k-th nearest neighbour inside the point's own set, or the
    fixed ``threshold`` for every point when one is given.
    """
    R = np.asarray(real_f, dtype=np.float64)
    S = np.asarray(syn_f, dtype=np.float64)
    if threshold is None:
        if not (len(R) > k and len(S) > k):
            raise ValidationError(f"k={k} must be below both set sizes ({len(R)}, {len(S)})")
        r_real = kernels.knn_sq_radius(R, k)
        r_syn = kernels.knn_sq_radius(S, k)
    else:
        r_real = np.full(len(R), float(threshold) ** 2)
        r_syn = np.full(len(S), float(threshold) ** 2)
    idx, d2 = kernels.nearest(S, R)
    precision = float(np.mean(d2 <= r_real[idx]))
    idx, d2 = kernels.nearest(R, S)
    recall = float(np.mean(d2 <= r_syn[idx]))
    return precision, recall


@dataclass(frozen=True)
class FeatureExtractor:
    """``raw_pixels``, ``rff`` (needs ``fmap``) or ``classifier_penultimate`` (needs ``ckpt``)."""

    kind: str = "raw_pixels"
    fmap: object = None
    ckpt: object = None

    def __post_init__(self):
        if self.kind not in ("raw_pixels", "rff", "classifier_penultimate"):
            raise ValidationError(f"unknown extractor {self.kind!r}")

    def __call__(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
        if self.kind == "raw_pixels":
            return X
        if self.kind == "rff":
            return rff_features(X, self.fmap)
        return hidden_features(self.ckpt, X)

    def describe(self):
        out = {"kind": self.kind}
        if self.fmap is not None:
            out.update(D=self.fmap.D, bandwidth=self.fmap.bandwidth)
        if self.ckpt is not None:
            out["layers"] = list(self.ckpt.spec.layer_sizes)
        return out


def fidelity_report(real_X, syn_X, extractor, classifier=None, k=3):
    """The four metric keys for metrics.json (plus reserved null slots for FLD and ImageReward)."""
    fr, fs = extractor(real_X), extractor(syn_X)
    out = {
        "fid": frechet_distance(fit_gaussian(fr), fit_gaussian(fs)),
        "is_proxy": None,
        "fld": None,
        "image_reward": None,
        "extractor": extractor.describe(),
    }
    out["precision"], out["recall"] = precision_recall(fr, fs, k=k)
    if classifier is not None:
        out["is_proxy"] = inception_score_proxy(forward(classifier, np.asarray(syn_X).reshape(len(syn_X), -1)))
    return out
