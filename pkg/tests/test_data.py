import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swavdesk.data import (
    KIND_IMAGE,
    Dataset,
    DatasetFormatError,
    SyntheticConfig,
    generate_images,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
)
from swavdesk.numerics import ConfigError, Rng


def small_cfg(**kw):
    base = dict(n_classes=4, raw_dim=10, latent_dim=3, n_samples=203)
    base.update(kw)
    return SyntheticConfig(**base)


def test_zero_noise_collapses_each_class():
    ds = generate_synthetic(small_cfg(noise_sigma=0.0, raw_noise_sigma=0.0), Rng(0))
    for c in range(4):
        members = ds.x[ds.labels == c]
        np.testing.assert_array_equal(members, np.broadcast_to(members[0], members.shape))


def test_generation_deterministic():
    a = generate_synthetic(small_cfg(), Rng(3))
    b = generate_synthetic(small_cfg(), Rng(3))
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.x, generate_synthetic(small_cfg(), Rng(4)).x)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(0, 50))
def test_labels_balanced(k, extra):
    ds = generate_synthetic(small_cfg(n_classes=k, n_samples=k + extra), Rng(1))
    counts = np.bincount(ds.labels, minlength=k)
    assert counts.max() - counts.min() <= 1


def test_lift_depends_only_on_nonlinearity_seed():
    cfg = small_cfg(noise_sigma=0.0, raw_noise_sigma=0.0)
    a = generate_synthetic(cfg, Rng(0))
    b = generate_synthetic(small_cfg(noise_sigma=0.0, raw_noise_sigma=0.0, nonlinearity_seed=7), Rng(0))
    assert not np.array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_config_validation():
    with pytest.raises(ConfigError):
        SyntheticConfig(n_classes=10, n_samples=5)
    with pytest.raises(ConfigError):
        SyntheticConfig(raw_dim=0)


@pytest.mark.parametrize("with_labels", [True, False])
def test_vector_roundtrip(tmp_path, with_labels):
    ds = generate_synthetic(small_cfg(), Rng(2))
    if not with_labels:
        ds = Dataset(ds.x)
    path = tmp_path / "v.ssld"
    save_dataset(path, ds)
    back = load_dataset(path)
    np.testing.assert_array_equal(back.x, ds.x)
    assert back.kind == ds.kind
    if with_labels:
        np.testing.assert_array_equal(back.labels, ds.labels)
    else:
        assert back.labels is None


def test_image_roundtrip(tmp_path):
    ds = generate_images(6, 3, 12, Rng(0))
    assert ds.kind == KIND_IMAGE and ds.x.shape == (6, 3, 12, 12)
    assert ds.x.min() >= 0 and ds.x.max() <= 1
    save_dataset(tmp_path / "i.ssld", ds)
    back = load_dataset(tmp_path / "i.ssld")
    np.testing.assert_array_equal(back.x, ds.x)
    assert back.kind == KIND_IMAGE


def test_corrupt_magic(tmp_path):
    path = tmp_path / "bad.ssld"
    save_dataset(path, Dataset(np.ones((2, 3))))
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="bad magic"):
        load_dataset(path)


def test_truncated_payload_names_sizes(tmp_path):
    path = tmp_path / "t.ssld"
    save_dataset(path, Dataset(np.ones((4, 3)), np.arange(4)))
    full = path.read_bytes()
    path.write_bytes(full[:-5])
    with pytest.raises(DatasetFormatError, match=f"expected {len(full)} bytes, got {len(full) - 5}"):
        load_dataset(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "v.ssld"
    save_dataset(path, Dataset(np.ones((1, 1))))
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="version"):
        load_dataset(path)


def test_split_identity():
    labels = np.array([0, 1, 1, 0, 2])
    (only,) = split(labels, [1.0], Rng(0))
    np.testing.assert_array_equal(only, np.arange(5))


def test_split_half_balanced():
    labels = np.array([0, 1] * 5)
    a, b = split(labels, (0.5, 0.5), Rng(0))
    assert len(a) == len(b) == 5
    assert abs(int((labels[a] == 0).sum()) - int((labels[a] == 1).sum())) <= 1


def test_split_deterministic_and_rejects_bad_fractions():
    labels = np.arange(40) % 3
    first = split(labels, (0.6, 0.4), Rng(9))
    for x, y in zip(first, split(labels, (0.6, 0.4), Rng(9))):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ConfigError):
        split(labels, (0.6, 0.5), Rng(0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=60),
       st.lists(st.floats(0.0, 1.0), min_size=1, max_size=4).filter(lambda f: sum(f) > 0.1))
def test_split_partitions(labels, raw_fracs):
    fr = np.array(raw_fracs) / sum(raw_fracs)
    fr[-1] = 1.0 - fr[:-1].sum()
    fr = np.clip(fr, 0.0, 1.0)
    parts = split(labels, fr / fr.sum(), Rng(0))
    allidx = np.concatenate(parts)
    assert len(allidx) == len(labels)
    np.testing.assert_array_equal(np.sort(allidx), np.arange(len(labels)))
