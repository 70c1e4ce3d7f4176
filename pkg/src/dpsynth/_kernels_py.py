"""Pure numpy versions of the compiled kernels (same signatures, same tie rules)."""
import math

import numpy as np
from scipy.special import gammaln, logsumexp

# rows of queries processed per block when materializing pairwise differences
_BLOCK_ELEMS = 1 << 22


def rdp_log_a_int(q, sigma, alpha):
    k = np.arange(alpha + 1, dtype=np.float64)
    terms = (
        gammaln(alpha + 1.0)
        - gammaln(k + 1.0)
        - gammaln(alpha - k + 1.0)
        + k * math.log(q)
        + (alpha - k) * math.log1p(-q)
        + (k * k - k) / (2.0 * sigma * sigma)
    )
    return float(logsumexp(terms))


def _sq_dists(queries, refs):
    rows = max(1, _BLOCK_ELEMS // max(1, refs.shape[0] * refs.shape[1]))
    for start in range(0, queries.shape[0], rows):
        block = queries[start:start + rows]
        diff = block[:, None, :] - refs[None, :, :]
        yield start, np.einsum("ijk,ijk->ij", diff, diff)


def nearest(queries, refs):
    idx = np.empty(queries.shape[0], dtype=np.int64)
    dist = np.empty(queries.shape[0])
    for start, d2 in _sq_dists(queries, refs):
        arg = np.argmin(d2, axis=1)  # first occurrence on ties
        idx[start:start + len(arg)] = arg
        dist[start:start + len(arg)] = d2[np.arange(len(arg)), arg]
    return idx, dist


def knn_sq_radius(points, k):
    out = np.empty(points.shape[0])
    for start, d2 in _sq_dists(points, points):
        rows = np.arange(d2.shape[0])
        d2[rows, start + rows] = np.inf
        out[start:start + d2.shape[0]] = np.partition(d2, k - 1, axis=1)[:, k - 1]
    return out


def vote_histogram(voters, candidates):
    idx, _ = nearest(voters, candidates)
    return np.bincount(idx, minlength=candidates.shape[0]).astype(np.int64)
