import math

import numpy as np
import pytest

from voxplain import io
from voxplain.exceptions import DataError
from voxplain.slices import VIEWS, blend, export_slices, read_pgm, slice_image, write_pgm


def pixel(h, v, alpha, p):
    nh = (h[p] - h.min()) / (h.max() - h.min()) if h.max() > h.min() else 0.0
    nv = (v[p] - v.min()) / (v.max() - v.min()) if v.max() > v.min() else 0.0
    return math.floor(alpha * 255 * nh + (1 - alpha) * 255 * nv + 0.5)


@pytest.mark.parametrize("alpha", [0.0, 0.3, 0.5, 1.0])
def test_blend_per_pixel(rng, alpha):
    h = rng.normal(size=(5, 6, 7))
    v = rng.normal(size=(5, 6, 7))
    img = slice_image(h, v, "coronal", index=2, alpha=alpha)
    assert img.shape == (5, 7)
    for i in range(5):
        for k in range(7):
            assert img[i, k] == pixel(h, v, alpha, (i, 2, k))


def test_constant_heatmap_shows_volume(rng):
    v = rng.normal(size=(4, 4, 4))
    img = blend(np.full((4, 4, 4), 3.0), v, alpha=0.5)
    expected = np.floor(0.5 * 255 * (v - v.min()) / (v.max() - v.min()) + 0.5)
    assert np.array_equal(img, expected)


def test_center_index():
    h = np.zeros((3, 4, 110))
    h[:, :, 55] = 1.0
    assert np.all(slice_image(h, view="horizontal") == 255)


def test_view_axes(rng):
    h = rng.random((3, 4, 5))
    assert slice_image(h, view="sagittal", index=1).shape == (4, 5)
    assert slice_image(h, view="coronal", index=1).shape == (3, 5)
    assert slice_image(h, view="horizontal", index=1).shape == (3, 4)
    with pytest.raises(DataError):
        slice_image(h, view="horizontal", index=5)
    with pytest.raises(ValueError):
        slice_image(h, view="axial")


def test_pgm_round_trip(tmp_path):
    # byte values that look like whitespace must survive the header parse
    img = np.array([[10, 32, 9], [13, 255, 0]], dtype=np.uint8)
    write_pgm(tmp_path / "x.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n3 2\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "x.pgm"), img)


def test_export_all_views(tmp_path, rng):
    h, v = rng.random((6, 7, 8)), rng.random((6, 7, 8))
    paths = export_slices(h, v, str(tmp_path / "case"), index={"sagittal": 0})
    assert set(paths) == set(VIEWS)
    assert np.array_equal(read_pgm(paths["sagittal"]), slice_image(h, v, "sagittal", 0))
    assert np.array_equal(read_pgm(paths["horizontal"]), slice_image(h, v, "horizontal", 4))


def test_large_grid_blob_length(tmp_path):
    io.write_volume(tmp_path / "big", np.zeros((110, 110, 110), np.float32))
    assert (tmp_path / "big.raw").stat().st_size == 5_324_000
