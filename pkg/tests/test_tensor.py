import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import map_coordinates

from voxplain.exceptions import ShapeError
from voxplain.tensor import VoxelRegion, minmax_normalize, occlude, trilinear_upsample

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
small_shape = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))


class TestOcclude:
    def test_empty_region_is_identity(self, rng):
        v = rng.normal(size=(5, 5, 5))
        out = occlude(v, VoxelRegion.empty(), fill=9.0)
        assert np.array_equal(out, v)
        assert out is not v

    def test_whole_grid(self, rng):
        v = rng.normal(size=(4, 3, 5))
        assert np.all(occlude(v, VoxelRegion.cuboid((2, 1, 2), 10)) == 0.0)

    def test_corner_cuboid_count(self):
        region = VoxelRegion.cuboid((0, 0, 0), 3)
        brute = [p for p in itertools.product(range(10), repeat=3)
                 if all(abs(a - 0) <= 3 for a in p)]
        got = {tuple(p) for p in region.voxel_indices((10, 10, 10))}
        assert got == set(brute)
        assert len(brute) == 64

    def test_input_untouched(self, rng):
        v = rng.normal(size=(6, 6, 6))
        before = v.copy()
        occlude(v, VoxelRegion.cuboid((3, 3, 3), 1), fill=5.0)
        assert np.array_equal(v, before)

    def test_mask_shape_mismatch(self):
        with pytest.raises(ShapeError):
            occlude(np.zeros((3, 3, 3)), np.zeros((2, 3, 3), bool))

    @settings(max_examples=60, deadline=None)
    @given(small_shape, st.tuples(st.integers(-2, 7), st.integers(-2, 7), st.integers(-2, 7)),
           st.integers(0, 3), finite)
    def test_only_region_changes(self, shape, center, half, fill):
        v = np.arange(np.prod(shape), dtype=float).reshape(shape) + 0.5
        region = VoxelRegion.cuboid(center, half)
        out = occlude(v, region, fill)
        inside = np.zeros(shape, bool)
        for p in np.ndindex(*shape):
            inside[p] = all(abs(a - c) <= half for a, c in zip(p, center))
        assert np.array_equal(out[~inside], v[~inside])
        assert np.all(out[inside] == fill)

    @settings(max_examples=40, deadline=None)
    @given(small_shape, st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)), st.integers(0, 3))
    def test_cuboid_equals_explicit_form(self, shape, center, half):
        cub = VoxelRegion.cuboid(center, half)
        explicit = VoxelRegion.from_indices(cub.voxel_indices(shape))
        assert np.array_equal(cub.mask(shape), explicit.mask(shape))


class TestTrilinear:
    def test_constant(self):
        assert np.all(trilinear_upsample(np.ones((2, 2, 2)), (8, 8, 8)) == 1.0)

    def test_single_voxel(self):
        out = trilinear_upsample(np.full((1, 1, 1), 3.5), (4, 7, 2))
        assert out.shape == (4, 7, 2) and np.all(out == 3.5)

    def test_ramp_3_to_5(self):
        src = np.indices((3, 3, 3))[0].astype(float)  # f = x
        out = trilinear_upsample(src, (5, 5, 5))
        # target sample i sits at source coordinate i * 2 / 4
        expected = (np.arange(5) * 0.5)[:, None, None] * np.ones((5, 5, 5))
        assert np.allclose(out, expected, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(small_shape, small_shape, st.tuples(finite, finite, finite), finite)
    def test_affine_fields_exact(self, src_shape, dst_shape, slope, offset):
        idx = np.indices(src_shape).astype(float)
        src = offset + sum(s * i for s, i in zip(slope, idx))
        out = trilinear_upsample(src, dst_shape)
        pos = [np.arange(d) * ((n - 1) / (d - 1)) if d > 1 and n > 1 else np.zeros(d)
               for n, d in zip(src_shape, dst_shape)]
        grid = np.meshgrid(*pos, indexing="ij")
        expected = offset + sum(s * g for s, g in zip(slope, grid))
        assert np.allclose(out, expected, rtol=1e-9, atol=1e-7)

    def test_matches_map_coordinates(self, rng):
        src = rng.normal(size=(4, 3, 5))
        dst = (9, 7, 6)
        pos = [np.linspace(0, n - 1, d) for n, d in zip(src.shape, dst)]
        coords = np.stack(np.meshgrid(*pos, indexing="ij"))
        expected = map_coordinates(src, coords, order=1)
        assert np.allclose(trilinear_upsample(src, dst), expected, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, small_shape, elements=finite), small_shape)
    def test_range_preserved(self, src, dst):
        out = trilinear_upsample(src, dst)
        assert out.min() >= src.min() and out.max() <= src.max()

    @pytest.mark.parametrize("bad", [(0, 4, 4), (4, 4), (4, -1, 2)])
    def test_bad_target(self, bad):
        with pytest.raises(ShapeError):
            trilinear_upsample(np.ones((2, 2, 2)), bad)

    def test_nodes_reproduced(self, rng):
        # 4 -> 10: target index 3j sits exactly on source node j
        coarse = rng.random((4, 4, 4))
        fine = trilinear_upsample(coarse, (10, 10, 10))
        assert np.allclose(fine[::3, ::3, ::3], coarse, atol=1e-12)
        assert fine.max() == pytest.approx(coarse.max())


class TestMinmax:
    def test_example(self):
        assert np.allclose(minmax_normalize(np.array([0.0, 5.0, 10.0])), [0.0, 0.5, 1.0])

    def test_constant(self):
        assert np.all(minmax_normalize(np.full((3, 3, 3), 4.2)) == 0.0)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 50), elements=finite))
    def test_idempotent_monotone_bounded(self, h):
        n = minmax_normalize(h)
        assert np.all((n >= 0) & (n <= 1))
        assert np.allclose(minmax_normalize(n), n, atol=1e-12)
        i, j = np.meshgrid(np.arange(len(h)), np.arange(len(h)))
        assert not np.any((h[i] < h[j]) & (n[i] > n[j]))
