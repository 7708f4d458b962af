import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slkd.data import (DatasetManifest, degrade, generate_clean, load_split, make_sample,
                       materialize, read_ppm, write_ppm)
from slkd.errors import ContractViolation, FormatError
from slkd.metrics import psnr


def test_generate_clean_deterministic_and_bounded():
    a = generate_clean(7, (32, 48))
    assert a.shape == (3, 32, 48) and a.dtype == np.float32
    assert np.array_equal(a, generate_clean(7, (32, 48)))
    assert not np.array_equal(a, generate_clean(8, (32, 48)))
    assert a.min() >= 0 and a.max() <= 1


def test_generate_clean_rejects_small():
    with pytest.raises(ContractViolation):
        generate_clean(0, (8, 32))


def test_noise_zero_sigma_is_identity():
    x = generate_clean(1, (32, 32))
    assert np.array_equal(degrade(x, "noise", {"sigma": 0.0}, 3), x)


def test_blur_preserves_constant():
    x = np.full((3, 20, 20), 0.37, np.float32)
    np.testing.assert_allclose(degrade(x, "blur", {"radius": 3, "sigma": 1.5}, 0), x, atol=1e-6)


def test_noise_std_matches_sigma():
    # sample-statistics oracle: residual std on mid-gray within 10% of sigma
    sigma = 25 / 255
    x = np.full((3, 64, 64), 0.5, np.float32)
    resid = degrade(x, "noise", {"sigma": sigma}, 11) - x
    assert abs(resid.std() / sigma - 1) < 0.10


@pytest.mark.parametrize("kind", ["noise", "blur", "rain"])
def test_degrade_shape_range_determinism(kind):
    x = generate_clean(5, (40, 24))
    y = degrade(x, kind, None, 9)
    assert y.shape == x.shape
    assert y.min() >= 0 and y.max() <= 1
    assert np.array_equal(y, degrade(x, kind, None, 9))
    assert not np.array_equal(y, x)


def test_rain_brightens():
    x = np.full((3, 32, 32), 0.2, np.float32)
    y = degrade(x, "rain", {"count": 30, "intensity": 0.8}, 4)
    assert y.mean() > x.mean() and np.all(y >= x - 1e-7)


@pytest.mark.parametrize("kind,params", [
    ("snow", {}), ("noise", {"sigma": 1.5}), ("blur", {"radius": 7}),
    ("blur", {"sigma": 0.0}), ("rain", {"intensity": 2.0}), ("noise", {"foo": 1}),
])
def test_degrade_rejects_bad_params(kind, params):
    with pytest.raises(ContractViolation):
        degrade(generate_clean(0, (16, 16)), kind, params, 0)


def test_psnr_decreases_with_noise():
    x = generate_clean(3, (48, 48))
    vals = [psnr(x, degrade(x, "noise", {"sigma": s}, 5)) for s in (0.02, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


def test_ppm_single_white_pixel():
    assert write_ppm(np.ones((3, 1, 1))) == b"P6\n1 1\n255\n\xff\xff\xff"


def test_ppm_round_trip_error_bound():
    x = np.random.default_rng(0).random((3, 17, 23)).astype(np.float32)
    y = read_ppm(write_ppm(x))
    assert y.shape == x.shape
    assert np.abs(y - x).max() <= 1 / 510 + 1e-7


@settings(max_examples=25, deadline=None)
@given(h=st.integers(1, 9), w=st.integers(1, 9), seed=st.integers(0, 2 ** 32 - 1))
def test_ppm_idempotent_after_quantization(h, w, seed):
    raw = np.random.default_rng(seed).integers(0, 256, size=h * w * 3, dtype=np.uint8).tobytes()
    f = f"P6\n{w} {h}\n255\n".encode() + raw
    once = read_ppm(f)
    assert write_ppm(once) == f
    assert np.array_equal(read_ppm(write_ppm(once)), once)


def test_ppm_reader_accepts_comments_and_spacing():
    f = b"P6 # c\n 2\t1\n# another\n255\n" + bytes(range(6))
    img = read_ppm(f)
    assert img.shape == (3, 1, 2)
    assert img[1, 0, 1] * 255 == pytest.approx(4)


@pytest.mark.parametrize("buf,match", [
    (b"P3\n1 1\n255\n\x00\x00\x00", "offset 0"),
    (b"P6\n1 x\n255\n\x00\x00\x00", "offset 5"),
    (b"P6\n1 1\n65535\n\x00\x00\x00", "maxval"),
    (b"P6\n2 2\n255\n\x00\x00\x00", "truncated"),
    (b"P6\n2 2", "truncated"),
])
def test_ppm_malformed(buf, match):
    with pytest.raises(FormatError, match=match):
        read_ppm(buf)


def test_manifest_split_disjoint_and_complete():
    m = DatasetManifest("unused", count=37, holdout=0.25, seed=4)
    s = m.split_indices()
    assert len(s["train"]) + len(s["heldout"]) == 37
    assert not set(s["train"]) & set(s["heldout"])
    assert s == DatasetManifest("unused", count=37, holdout=0.25, seed=4).split_indices()


def test_materialize_layout(tmp_path):
    m = DatasetManifest(str(tmp_path / "ds"), count=5, size=(16, 16), seed=2, holdout=0.4)
    root = materialize(m)
    assert sorted(p.name for p in (root / "clean").iterdir()) == [f"{i:06d}.ppm" for i in range(5)]
    meta = json.loads((root / "manifest.json").read_text())
    assert meta["count"] == 5 and meta["size"] == [16, 16]
    loaded = DatasetManifest.load(root)
    assert loaded.split_indices() == m.split_indices()
    idx, clean, degraded = load_split(loaded, "heldout")
    assert len(idx) == 2 and clean.shape == (2, 3, 16, 16)
    c0, _ = make_sample(m, idx[0])
    assert np.abs(clean[0] - c0).max() <= 1 / 510 + 1e-7


def test_load_split_missing_file(tmp_path):
    m = DatasetManifest(str(tmp_path), count=3, size=(16, 16))
    with pytest.raises(FileNotFoundError, match=str(tmp_path)):
        load_split(m, "train")
