"""Grid primitives shared by the rest of the package.

Volumes and heatmaps are plain 3D numpy arrays indexed ``[x, y, z]``.
Only file I/O cares about linear storage order (x-fastest, see
:mod:`voxplain.io`).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError

__all__ = [
    "VoxelRegion",
    "occlude",
    "trilinear_upsample",
    "minmax_normalize",
]


@dataclass(frozen=True)
class VoxelRegion:
    """A set of voxels, either a clipped cuboid or explicit indices.

    Use :meth:`cuboid` or :meth:`from_indices` to construct. A cuboid is
    given by its center voxel and a per-axis half-extent; the covered set
    is ``center - half .. center + half`` inclusive on each axis, clipped
    to the grid.
    """

    center: tuple = None
    half_extent: tuple = None
    indices: tuple = None

    @classmethod
    def cuboid(cls, center, half_extent):
        center = tuple(int(c) for c in center)
        if np.isscalar(half_extent):
            half_extent = (int(half_extent),) * len(center)
        half_extent = tuple(int(h) for h in half_extent)
        if len(center) != 3 or len(half_extent) != 3:
            raise ShapeError("cuboid regions need 3 center and half-extent components")
        if min(half_extent) < 0:
            raise ValueError(f"half extent must be non-negative, got {half_extent}")
        return cls(center=center, half_extent=half_extent)

    @classmethod
    def from_indices(cls, indices):
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, 3)
        return cls(indices=tuple(map(tuple, idx.tolist())))

    @classmethod
    def empty(cls):
        return cls(indices=())

    def slices(self, shape):
        """Per-axis slices of a clipped cuboid region (empty slices allowed)."""
        if self.center is None:
            raise TypeError("slices() is only defined for cuboid regions")
        out = []
        for c, h, n in zip(self.center, self.half_extent, shape):
            lo = max(c - h, 0)
            hi = min(c + h + 1, n)
            out.append(slice(lo, max(lo, hi)))
        return tuple(out)

    def mask(self, shape):
        """Boolean mask of the region on a grid of the given shape."""
        shape = tuple(shape)
        m = np.zeros(shape, dtype=bool)
        if self.center is not None:
            m[self.slices(shape)] = True
            return m
        if self.indices:
            idx = np.asarray(self.indices, dtype=np.int64)
            inside = np.all((idx >= 0) & (idx < np.asarray(shape)), axis=1)
            idx = idx[inside]
            m[idx[:, 0], idx[:, 1], idx[:, 2]] = True
        return m

    def voxel_indices(self, shape):
        """Sorted ``(n, 3)`` array of in-bounds voxel indices."""
        return np.argwhere(self.mask(shape))


def occlude(volume, region, fill=0.0):
    """Return a copy of ``volume`` with ``region`` set to ``fill``.

    ``region`` may be a :class:`VoxelRegion` or a boolean mask of the
    same shape as the volume. The input array is never modified.
    """
    volume = np.asarray(volume)
    out = volume.copy()
    if isinstance(region, VoxelRegion):
        if region.center is not None:
            out[region.slices(volume.shape)] = fill
        else:
            out[region.mask(volume.shape)] = fill
        return out
    mask = np.asarray(region, dtype=bool)
    if mask.shape != volume.shape:
        raise ShapeError(f"mask shape {mask.shape} does not match volume {volume.shape}")
    out[mask] = fill
    return out


def _sample_positions(n_src, n_dst):
    # align-corners: first and last samples coincide on both grids
    if n_dst == 1 or n_src == 1:
        return np.zeros(n_dst)
    return np.arange(n_dst) * ((n_src - 1) / (n_dst - 1))


def _interp_axis(grid, axis, n_dst):
    n_src = grid.shape[axis]
    if n_src == n_dst:
        return grid
    pos = _sample_positions(n_src, n_dst)
    if n_src == 1:
        return np.repeat(grid, n_dst, axis=axis)
    lo = np.clip(np.floor(pos).astype(np.int64), 0, n_src - 2)
    frac = pos - lo
    shape = [1] * grid.ndim
    shape[axis] = n_dst
    frac = frac.reshape(shape)
    a = np.take(grid, lo, axis=axis)
    b = np.take(grid, lo + 1, axis=axis)
    return a + frac * (b - a)


def trilinear_upsample(grid, target_shape):
    """Resample a 3D grid to ``target_shape`` by trilinear interpolation.

    Uses the align-corners convention: source and target corner voxels
    coincide, so affine fields are reproduced exactly and constants stay
    constant. Works for down-sampling as well.

    Parameters
    ----------
    grid : array_like, shape (a, b, c)
    target_shape : tuple of 3 ints, each >= 1

    Returns
    -------
    ndarray of float64, shape ``target_shape``
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 3:
        raise ShapeError(f"expected a 3D grid, got shape {g.shape}")
    if min(g.shape) < 1:
        raise ShapeError(f"source grid has an empty axis: {g.shape}")
    target_shape = tuple(int(t) for t in target_shape)
    if len(target_shape) != 3 or min(target_shape) < 1:
        raise ShapeError(f"invalid target shape {target_shape}")
    for axis, n in enumerate(target_shape):
        g = _interp_axis(g, axis, n)
    # linear blends can overshoot by an ulp; keep the documented range
    return np.clip(g, np.min(grid), np.max(grid))


def minmax_normalize(heatmap):
    """Rescale scores to [0, 1]; a constant map becomes all zeros."""
    h = np.asarray(heatmap, dtype=np.float64)
    lo = h.min()
    span = h.max() - lo
    if not span > 0:
        return np.zeros_like(h)
    out = (h - lo) / span
    return np.clip(out, 0.0, 1.0)
