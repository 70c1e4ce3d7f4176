# cython: language_level=3
"""Compiled inner loops. ``_kernels_py`` holds the numpy twin of every function here."""
import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, lgamma, log, log1p

cnp.import_array()


def rdp_log_a_int(double q, double sigma, long alpha):
    """log of the integer-order binomial moment of the subsampled Gaussian, 0 < q < 1."""
    cdef long k
    cdef double log_q = log(q)
    cdef double log_1mq = log1p(-q)
    cdef double inv = 1.0 / (2.0 * sigma * sigma)
    cdef double lg_top = lgamma(alpha + 1.0)
    cdef double s, top = -INFINITY, acc = 0.0
    cdef cnp.ndarray[cnp.float64_t, ndim=1] terms = np.empty(alpha + 1)
    for k in range(alpha + 1):
        s = (lg_top - lgamma(k + 1.0) - lgamma(alpha - k + 1.0)
             + k * log_q + (alpha - k) * log_1mq + (k * k - k) * inv)
        terms[k] = s
        if s > top:
            top = s
    for k in range(alpha + 1):
        acc += exp(terms[k] - top)
    return top + log(acc)


def nearest(cnp.ndarray[cnp.float64_t, ndim=2] queries,
            cnp.ndarray[cnp.float64_t, ndim=2] refs):
    """Index of (and squared distance to) the nearest ref row for each query row.

    Ties go to the lowest ref index.
    """
    cdef Py_ssize_t n = queries.shape[0], m = refs.shape[0], d = queries.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc, diff, best
    cdef Py_ssize_t arg
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] dist = np.empty(n)
    for i in range(n):
        best = INFINITY
        arg = 0
        for j in range(m):
            acc = 0.0
            for c in range(d):
                diff = queries[i, c] - refs[j, c]
                acc += diff * diff
                if acc >= best:
                    break
            if acc < best:
                best = acc
                arg = j
        idx[i] = arg
        dist[i] = best
    return idx, dist


def knn_sq_radius(cnp.ndarray[cnp.float64_t, ndim=2] points, long k):
    """Squared distance from each row to its k-th nearest other row."""
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1]
    cdef Py_ssize_t i, j, c, p
    cdef double acc, diff
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] buf = np.empty(k)
    for i in range(n):
        for p in range(k):
            buf[p] = INFINITY
        for j in range(n):
            if j == i:
                continue
            acc = 0.0
            for c in range(d):
                diff = points[i, c] - points[j, c]
                acc += diff * diff
            if acc < buf[k - 1]:
                # insertion into the ascending buffer of the k smallest
                p = k - 1
                while p > 0 and buf[p - 1] > acc:
                    buf[p] = buf[p - 1]
                    p -= 1
                buf[p] = acc
        out[i] = buf[k - 1]
    return out


def vote_histogram(cnp.ndarray[cnp.float64_t, ndim=2] voters,
                   cnp.ndarray[cnp.float64_t, ndim=2] candidates):
    """Each voter adds one count to its nearest candidate."""
    cdef cnp.ndarray[cnp.int64_t, ndim=1] idx
    idx, _ = nearest(voters, candidates)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] hist = np.zeros(candidates.shape[0], dtype=np.int64)
    cdef Py_ssize_t i
    for i in range(idx.shape[0]):
        hist[idx[i]] += 1
    return hist
