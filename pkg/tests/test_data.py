import numpy as np
import pytest
from PIL import Image

from face3dsr.data import (
    DataError,
    DatasetSpec,
    PngDirectoryDataset,
    SyntheticFaceDataset,
    center_crop_resize,
    sample_coefficients,
    split,
)
from face3dsr.imageio import read_png, to_uint8, write_png, write_ply
from face3dsr.morphable import N_COEFFS
from face3dsr.resample import degrade


def test_synthetic_samples_are_reproducible_bytes(basis):
    a = SyntheticFaceDataset(3, seed=7, basis=basis)
    b = SyntheticFaceDataset(3, seed=7, basis=basis, workers=3)
    c = SyntheticFaceDataset(3, seed=8, basis=basis)
    for x, y in zip(a, b):
        assert x.hr.tobytes() == y.hr.tobytes() and x.lr.tobytes() == y.lr.tobytes()
        assert x.name == y.name
    assert a[0].hr.tobytes() != c[0].hr.tobytes()


def test_sample_i_depends_only_on_seed_and_index(basis):
    short = SyntheticFaceDataset(1, seed=2, basis=basis)
    longer = SyntheticFaceDataset(2, seed=2, basis=basis)
    assert short[0].hr.tobytes() == longer[0].hr.tobytes()


@pytest.mark.parametrize("scale", [4, 8])
def test_sample_geometry(basis, scale):
    s = SyntheticFaceDataset(1, seed=0, scale=scale, basis=basis)[0]
    assert s.hr.shape == (3, 128, 128) and s.hr.dtype == np.float32
    assert s.lr.shape == (3, 128 // scale, 128 // scale)
    assert s.coeffs.shape == (N_COEFFS,)
    np.testing.assert_array_equal(s.lr, degrade(s.hr, scale))
    assert 0 <= s.hr.min() and s.hr.max() <= 1


def test_coefficient_draws_are_seeded():
    a = sample_coefficients(np.random.default_rng(0))
    assert a.tobytes() == sample_coefficients(np.random.default_rng(0)).tobytes()
    assert a.dtype == np.float32 and a.shape == (N_COEFFS,)


def test_dataset_spec_validation():
    assert DatasetSpec(scale=4).lr_size == 32
    with pytest.raises(ValueError):
        DatasetSpec(scale=3)
    with pytest.raises(ValueError):
        DatasetSpec(crop="random")
    with pytest.raises(ValueError):
        SyntheticFaceDataset(0)


def test_center_crop_takes_middle_square():
    img = np.zeros((128, 200, 3), dtype=np.float32)
    img[:, 36:164] = 1.0
    out = center_crop_resize(img)
    assert out.shape == (3, 128, 128) and np.all(out == 1.0)
    big = np.full((256, 300, 3), 0.25, dtype=np.float32)
    assert np.all(center_crop_resize(big) == np.float32(0.25))


def test_png_directory_dataset(tmp_path):
    rng = np.random.default_rng(0)
    for name in ("b.png", "a.png"):
        write_png(tmp_path / name, rng.uniform(0, 1, (150, 130, 3)))
    (tmp_path / "notes.txt").write_text("ignored")
    ds = PngDirectoryDataset(tmp_path, scale=4)
    assert [s.name for s in ds] == ["a.png", "b.png"]
    assert ds[0].hr.shape == (3, 128, 128) and ds[0].lr.shape == (3, 32, 32) and ds[0].coeffs is None


def test_png_directory_errors(tmp_path):
    with pytest.raises(DataError):
        PngDirectoryDataset(tmp_path)
    (tmp_path / "broken.png").write_bytes(b"not a png")
    with pytest.raises(DataError):
        PngDirectoryDataset(tmp_path)


def test_split_is_deterministic_partition():
    items = list(range(10))
    tr, va = split(items, seed=3)
    assert len(tr) == 8 and sorted(tr + va) == items
    assert split(items, seed=3) == (tr, va)


def test_png_round_trip_is_8bit_exact(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (9, 7, 3)) / 255.0
    write_png(tmp_path / "x.png", img)
    np.testing.assert_array_equal(to_uint8(read_png(tmp_path / "x.png")), to_uint8(img))
    write_png(tmp_path / "chw.png", np.transpose(img, (2, 0, 1)))
    assert Image.open(tmp_path / "chw.png").size == (7, 9)


def test_ply_writer(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    write_ply(tmp_path / "m.ply", v, np.array([[0, 1, 2]]), np.array([[1, 0, 0]] * 3, dtype=float))
    lines = (tmp_path / "m.ply").read_text().splitlines()
    assert lines[0] == "ply" and "element vertex 3" in lines and "end_header" in lines
    assert lines[-1] == "3 0 1 2" and lines[-4].endswith("255 0 0")
