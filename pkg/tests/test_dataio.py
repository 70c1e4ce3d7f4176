import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from dpsynth.dataio import (
    MAGIC,
    Dataset,
    SplitManifest,
    load_dataset,
    load_tensor,
    resize_nearest,
    save_dataset,
    save_tensor,
    split_dataset,
)
from dpsynth.errors import FormatError, ValidationError


def test_bundled_digits_dims(digits):
    assert len(digits) == 2000
    assert digits.shape == (8, 8, 1)
    assert digits.K == 10
    assert (digits.split.N_train, digits.split.N_val, digits.split.N_test) == (1400, 200, 400)


@pytest.mark.parametrize("dtype", ["f32", "u8"])
def test_round_trip_bit_exact(tmp_path, dtype):
    ds = make_dataset(seed=3)
    if dtype == "u8":
        ds = Dataset(np.round(ds.images * 255) / 255, ds.labels, ds.K, ds.split)
    save_dataset(ds, tmp_path / "d", dtype=dtype)
    back = load_dataset(tmp_path / "d")
    assert back.images.tobytes() == ds.images.tobytes()
    assert np.array_equal(back.labels, ds.labels)
    assert back.split == ds.split and back.K == ds.K


def test_tensor_header_layout(tmp_path):
    p = tmp_path / "t.dpsl"
    save_tensor(p, np.zeros((2, 3), dtype=np.float32))
    raw = p.read_bytes()
    assert raw[:8] == MAGIC
    assert raw[8] == 0 and raw[9] == 2
    assert int.from_bytes(raw[10:18], "little") == 2
    assert len(raw) == 10 + 16 + 6 * 4


def test_bad_magic_is_format_error(tmp_path):
    p = tmp_path / "t.dpsl"
    p.write_bytes(b"NOTMAGIC" + bytes(10))
    with pytest.raises(FormatError):
        load_tensor(p)


def test_truncated_payload_is_format_error(tmp_path):
    p = tmp_path / "t.dpsl"
    save_tensor(p, np.zeros((4,), dtype=np.float32))
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(FormatError):
        load_tensor(p)


def test_label_equal_to_K_rejected(tmp_path):
    ds = make_dataset()
    save_dataset(ds, tmp_path / "d")
    labels = ds.labels.copy()
    labels[0] = ds.K
    save_tensor(tmp_path / "d" / "labels.dpsl", labels.astype(np.uint8))
    with pytest.raises(ValidationError):
        load_dataset(tmp_path / "d")


def test_pixels_outside_unit_interval_rejected():
    with pytest.raises(ValidationError):
        Dataset(np.full((2, 1, 1, 1), 1.5), [0, 0], 1)


def test_overlapping_splits_rejected():
    with pytest.raises(ValidationError):
        SplitManifest([0, 1], [1], [2])


def test_mnist_split_sizes():
    n = 70000
    ds = Dataset(np.zeros((n, 1, 1, 1), dtype=np.float32), np.zeros(n, dtype=np.int64), 1)
    out = split_dataset(ds, (55000 / n, 5000 / n, 10000 / n), seed=0)
    assert (out.split.N_train, out.split.N_val, out.split.N_test) == (55000, 5000, 10000)


def test_all_train():
    ds = split_dataset(make_dataset(split=False), (1, 0, 0), seed=1)
    assert sorted(ds.split.train_idx) == list(range(len(ds)))
    assert len(ds.split.val_idx) == 0 and len(ds.split.test_idx) == 0


def test_fractions_over_one_rejected():
    with pytest.raises(ValidationError):
        split_dataset(make_dataset(split=False), (0.6, 0.3, 0.2), seed=0)


def test_split_deterministic():
    ds = make_dataset(split=False, n=50)
    assert split_dataset(ds, (0.5, 0.2, 0.3), 9).split == split_dataset(ds, (0.5, 0.2, 0.3), 9).split
    assert split_dataset(ds, (0.5, 0.2, 0.3), 9).split != split_dataset(ds, (0.5, 0.2, 0.3), 10).split


@settings(max_examples=40, deadline=None)
@given(n=st.integers(10, 120), K=st.integers(1, 6), seed=st.integers(0, 2**32),
       f=st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)))
def test_stratified_split_properties(n, K, seed, f):
    total = sum(f)
    if total > 1:
        f = tuple(x / total * 0.999 for x in f)
    labels = np.random.default_rng(seed % 1000).integers(K, size=n)
    ds = Dataset(np.zeros((n, 1, 1, 1), dtype=np.float32), labels, K)
    out = split_dataset(ds, f, seed, stratified=True)
    parts = [out.split.train_idx, out.split.val_idx, out.split.test_idx]
    for part, frac in zip(parts, f):
        assert len(part) == int(np.floor(frac * n + 1e-9))
        counts = np.bincount(labels[np.asarray(part, dtype=np.int64)], minlength=K)
        assert np.all(np.abs(counts - frac * np.bincount(labels, minlength=K)) <= 1 + 1e-9)
    assert len(set().union(*map(set, parts))) == sum(map(len, parts))


def test_resize_identity():
    ds = make_dataset(shape=(4, 4, 1))
    assert np.array_equal(resize_nearest(ds, 4, 4).images, ds.images)


def test_resize_constant():
    ds = Dataset(np.full((1, 2, 2, 1), 0.3), [0], 1)
    out = resize_nearest(ds, 4, 4)
    assert out.images.shape == (1, 4, 4, 1)
    assert np.all(out.images == np.float32(0.3))


def test_resize_index_map(digits):
    out = resize_nearest(digits, 4, 4)
    ref = np.empty((len(digits), 4, 4, 1), dtype=np.float32)
    for i in range(4):
        for j in range(4):
            ref[:, i, j] = digits.images[:, (i * 8) // 4, (j * 8) // 4]
    assert np.array_equal(out.images, ref)


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 12), w=st.integers(1, 12))
def test_resize_stays_in_unit_interval(h, w):
    out = resize_nearest(make_dataset(shape=(5, 3, 2)), h, w)
    assert out.images.min() >= 0 and out.images.max() <= 1


def test_dataset_is_immutable():
    ds = make_dataset()
    with pytest.raises(ValueError):
        ds.images[0, 0, 0, 0] = 0.5


def test_manifest_json_keys(tmp_path):
    save_dataset(make_dataset(), tmp_path / "d")
    with open(os.path.join(tmp_path, "d", "manifest.json")) as fh:
        assert set(json.load(fh)) == {"train_idx", "val_idx", "test_idx", "K"}
