"""Dataset storage, splitting and preprocessing.

On disk a dataset is a directory holding ``images.dpsl``, ``labels.dpsl`` and
``manifest.json``. The ``.dpsl`` TensorFile layout (little-endian) is::

    b"DPSL0001" | dtype u8 (0=f32, 1=u8) | rank u8 | rank x u64 shape | payload

u8 image payloads are scaled to [0, 1] on load.
"""
import json
import math
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"DPSL0001"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("<f4"): 0, np.dtype("u1"): 1}


def save_tensor(path, array):
    array = np.asarray(array)
    if array.dtype == np.float64:
        array = array.astype("<f4")
    dt = np.dtype(array.dtype).newbyteorder("<") if array.dtype.kind == "f" else array.dtype
    if dt not in _CODES:
        raise ValidationError(f"unsupported dtype {array.dtype}; use float32 or uint8")
    if array.ndim > 255:
        raise ValidationError("rank above 255")
    header = MAGIC + struct.pack("<BB", _CODES[dt], array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array, dtype=dt).tobytes())


def load_tensor(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 10:
        raise FormatError(f"{path}: truncated header")
    code, rank = struct.unpack_from("<BB", raw, 8)
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dt = _DTYPES[code]
    off = 10 + 8 * rank
    if len(raw) < off:
        raise FormatError(f"{path}: truncated shape")
    shape = struct.unpack_from(f"<{rank}Q", raw, 10)
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(raw) - off != expected:
        raise FormatError(f"{path}: payload has {len(raw) - off} bytes, shape {shape} needs {expected}")
    return np.frombuffer(raw, dtype=dt, offset=off).reshape(shape).copy()


@dataclass(frozen=True)
class SplitManifest:
    train_idx: tuple = ()
    val_idx: tuple = ()
    test_idx: tuple = ()

    def __post_init__(self):
        for name in ("train_idx", "val_idx", "test_idx"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))
        a, b, c = set(self.train_idx), set(self.val_idx), set(self.test_idx)
        if len(a) != len(self.train_idx) or len(b) != len(self.val_idx) or len(c) != len(self.test_idx):
            raise ValidationError("split index lists contain duplicates")
        if a & b or a & c or b & c:
            raise ValidationError("split index sets overlap")

    @property
    def N_train(self):
        return len(self.train_idx)

    @property
    def N_val(self):
        return len(self.val_idx)

    @property
    def N_test(self):
        return len(self.test_idx)


@dataclass(frozen=True)
class Dataset:
    """Images ``[N, H, W, C]`` in [0, 1] with integer labels in ``[0, K)``."""

    images: np.ndarray
    labels: np.ndarray
    K: int
    split: SplitManifest = field(default_factory=SplitManifest)

    def __post_init__(self):
        images = np.array(self.images, dtype=np.float32)
        labels = np.array(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValidationError(f"images must be [N, H, W, C], got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise ValidationError("labels must be a vector with one entry per image")
        if images.size and (images.min() < 0.0 or images.max() > 1.0 or np.isnan(images).any()):
            raise ValidationError("pixel values must lie in [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.K):
            raise ValidationError(f"labels must lie in [0, {self.K})")
        n = images.shape[0]
        for idx in (self.split.train_idx, self.split.val_idx, self.split.test_idx):
            if idx and (min(idx) < 0 or max(idx) >= n):
                raise ValidationError("split index out of range")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]

    @property
    def dim(self):
        return int(np.prod(self.shape))

    def flat(self):
        """Images as float64 rows ``[N, H*W*C]``."""
        return self.images.reshape(len(self), -1).astype(np.float64)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.K)

    def part(self, name):
        """The ``train``, ``val`` or ``test`` slice as its own Dataset."""
        return self.subset(getattr(self.split, f"{name}_idx"))

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.K)


def save_dataset(ds, path, dtype="f32"):
    os.makedirs(path, exist_ok=True)
    if dtype == "u8":
        save_tensor(os.path.join(path, "images.dpsl"), np.round(ds.images * 255).astype(np.uint8))
    else:
        save_tensor(os.path.join(path, "images.dpsl"), ds.images.astype("<f4"))
    if ds.K > 256:
        raise ValidationError("label container is u8; K above 256 is unsupported")
    save_tensor(os.path.join(path, "labels.dpsl"), ds.labels.astype(np.uint8))
    manifest = {
        "train_idx": list(ds.split.train_idx),
        "val_idx": list(ds.split.val_idx),
        "test_idx": list(ds.split.test_idx),
        "K": int(ds.K),
    }
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh)


def load_dataset(path):
    images = load_tensor(os.path.join(path, "images.dpsl"))
    labels = load_tensor(os.path.join(path, "labels.dpsl"))
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / np.float32(255.0)
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
        K = int(manifest["K"])
        split = SplitManifest(manifest["train_idx"], manifest["val_idx"], manifest["test_idx"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc
    return Dataset(images, labels.astype(np.int64), K, split)


def _split_sizes(fractions, n):
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValidationError(f"need three nonnegative fractions, got {fractions}")
    if sum(fractions) > 1 + 1e-12:
        raise ValidationError(f"fractions sum to {sum(fractions)} > 1")
    # the epsilon absorbs representation error in ratios such as 55000/70000
    return [int(math.floor(f * n + 1e-9)) for f in fractions]


def split_dataset(ds, fractions, seed, stratified=False):
    """Shuffle under ``seed`` and cut train/val/test parts of size ``floor(f * N)``.

    With ``stratified=True`` each class contributes within one record of its
    proportional share to every part.
    """
    from .rng import SeededRng

    n = len(ds)
    sizes = _split_sizes(fractions, n)
    rng = SeededRng(seed, stream=0x5B117)
    if not stratified:
        perm = rng.permutation(n)
        cuts = np.cumsum([0] + sizes)
        parts = [perm[cuts[i]:cuts[i + 1]] for i in range(3)]
    else:
        by_class = [np.flatnonzero(ds.labels == k) for k in range(ds.K)]
        by_class = [idx[rng.permutation(len(idx))] for idx in by_class]
        alloc = _stratified_allocation([len(i) for i in by_class], fractions, sizes)
        parts = [[], [], []]
        for k, idx in enumerate(by_class):
            start = 0
            for s in range(3):
                parts[s].extend(idx[start:start + alloc[k][s]])
                start += alloc[k][s]
        parts = [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
        parts = [p[rng.permutation(len(p))] for p in parts]
    split = SplitManifest(*[p.tolist() for p in parts])
    return replace(ds, split=split)


def _stratified_allocation(class_sizes, fractions, totals):
    """Per-class part sizes: floor of each proportional quota plus at most one extra.

    The extras form a transportation problem (each part needs ``short_s`` more
    records, each class has ``spare_k`` unassigned ones, each cell takes 0 or
    1). The proportional fractional solution is feasible and the constraint
    matrix is totally unimodular, so the LP optimum favouring large remainders
    is integral.
    """
    from scipy.optimize import linprog

    K = len(class_sizes)
    alloc = np.array([[int(math.floor(f * m + 1e-9)) for f in fractions] for m in class_sizes], dtype=np.int64)
    short = np.asarray(totals) - alloc.sum(axis=0)
    if not short.any():
        return alloc.tolist()
    spare = np.asarray(class_sizes) - alloc.sum(axis=1)
    rem = np.array([[f * m for f in fractions] for m in class_sizes]) - alloc
    # variables x[k, s] flattened row-major; ties prefer lower class ids
    cost = -(rem + 1e-9 * (K - np.arange(K))[:, None] / K).ravel()
    A_eq = np.zeros((3, 3 * K))
    A_ub = np.zeros((K, 3 * K))
    for k in range(K):
        A_ub[k, 3 * k:3 * k + 3] = 1
        for s in range(3):
            A_eq[s, 3 * k + s] = 1
    res = linprog(cost, A_ub=A_ub, b_ub=spare, A_eq=A_eq, b_eq=short, bounds=(0, 1), method="highs")
    if res.status != 0:
        raise ValidationError("stratified split could not meet the requested sizes")
    return (alloc + np.round(res.x).astype(np.int64).reshape(K, 3)).tolist()


def resize_nearest(ds, h, w):
    """Nearest-neighbour resample; source row for output row i is ``floor(i * H / h)``."""
    if h < 1 or w < 1:
        raise ValidationError(f"target size must be >= 1, got {h}x{w}")
    H, W = ds.images.shape[1:3]
    rows = (np.arange(h) * H) // h
    cols = (np.arange(w) * W) // w
    images = ds.images[:, rows][:, :, cols]
    return replace(ds, images=images)


def ensure_splits(ds):
    if not (ds.split.train_idx and ds.split.val_idx and ds.split.test_idx):
        raise ValidationError("dataset needs non-empty train, val and test splits")
    return ds
