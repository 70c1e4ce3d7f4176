"""Generated datasets used by tests, audits and the bundled configs."""
import os

import numpy as np

from .dataio import Dataset, load_dataset, save_dataset, split_dataset
from .rng import SeededRng

# seven-segment strokes on an 8x8 canvas: (rows, cols) painted per segment
_SEGMENTS = {
    "a": ([1], range(2, 6)),
    "b": (range(1, 5), [5]),
    "c": (range(4, 8), [5]),
    "d": ([7], range(2, 6)),
    "e": (range(4, 8), [2]),
    "f": (range(1, 5), [2]),
    "g": ([4], range(2, 6)),
}
_DIGITS = ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]

THREE_GAUSSIAN_MEANS = np.array([[0.2, 0.2], [0.8, 0.3], [0.5, 0.8]])
THREE_GAUSSIAN_STD = 0.05


def digit_template(k):
    img = np.zeros((8, 8))
    for seg in _DIGITS[k]:
        rows, cols = _SEGMENTS[seg]
        for r in rows:
            img[r, list(cols)] = 1.0
    return img


def _shift(img, dy, dx):
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def _render(templates, n, seed, noise=0.08):
    rng = SeededRng(seed, stream=0xF1C)
    K = len(templates)
    labels = np.arange(n) % K
    labels = labels[rng.permutation(n)]
    images = np.empty((n, 8, 8, 1), dtype=np.float32)
    shifts = rng.integers(3, size=(n, 2)) - 1
    gain = 0.6 + 0.4 * rng.uniform(n)
    jitter = noise * rng.normal((n, 8, 8))
    for i in range(n):
        img = gain[i] * _shift(templates[labels[i]], int(shifts[i, 0]), int(shifts[i, 1])) + jitter[i]
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return images, labels


def toy_digits(n=2000, seed=7, fractions=(0.7, 0.1, 0.2)):
    """8x8x1 seven-segment digits, K=10, split train/val/test."""
    images, labels = _render([digit_template(k) for k in range(10)], n, seed)
    ds = Dataset(images, labels, 10)
    return split_dataset(ds, fractions, seed, stratified=True)


def public_digits(n=2000, seed=11):
    """Public pool with 20 classes: the ten digits plus ten random stroke patterns.

    Stands in for a large labelled public corpus when selecting a pretraining subset.
    """
    rng = SeededRng(seed, stream=0xB0B)
    extra = []
    for _ in range(10):
        t = np.zeros((8, 8))
        segs = rng.choice(7, size=3, p=None)
        for s in segs:
            rows, cols = _SEGMENTS["abcdefg"[int(s)]]
            for r in rows:
                t[r, list(cols)] = 1.0
        # diagonal stroke keeps these patterns off the digit templates
        np.fill_diagonal(t, 1.0)
        extra.append(t)
    images, labels = _render([digit_template(k) for k in range(10)] + extra, n, seed)
    return Dataset(images, labels, 20)


def three_gaussians(n=1500, seed=3, fractions=(0.7, 0.1, 0.2)):
    """2-D mixture of three well separated Gaussians, stored as ``[N, 1, 2, 1]`` images."""
    rng = SeededRng(seed, stream=0x3A)
    labels = rng.integers(3, size=n)
    pts = THREE_GAUSSIAN_MEANS[labels] + THREE_GAUSSIAN_STD * rng.normal((n, 2))
    pts = np.clip(pts, 0.0, 1.0)
    ds = Dataset(pts.reshape(n, 1, 2, 1), labels, 3)
    return split_dataset(ds, fractions, seed, stratified=True)


_BUNDLED = {"toy_digits": toy_digits, "three_gaussians": three_gaussians, "public_digits": public_digits}


def bundled_path(name):
    return os.path.join(os.path.dirname(__file__), "data", name)


def load_bundled(name):
    """Load a fixture shipped with the package, regenerating it if missing."""
    path = bundled_path(name)
    if not os.path.exists(os.path.join(path, "manifest.json")):
        save_dataset(_BUNDLED[name](), path, dtype="f32")
    return load_dataset(path)
