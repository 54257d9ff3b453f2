"""Synthetic two-class volumes with a known discriminative lesion.

Each volume is smoothed Gaussian noise, standardized to zero mean and unit
variance, scaled by ``amplitude``. Class 1 (AD) volumes additionally get a
constant ``delta`` inside the lesion; class 0 (NC) volumes do not, so
outside the lesion both classes share one distribution.
"""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .benchmark import LabeledDataset
from .exceptions import ShapeError

__all__ = ["PhantomSpec", "lesion_mask", "generate", "generate_one"]

SHAPES = ("cuboid", "ellipsoid")


@dataclass(frozen=True)
class PhantomSpec:
    """Generator settings.

    Attributes
    ----------
    dims : tuple of int
    amplitude : float
        Standard deviation of the background texture.
    correlation : int
        Box-filter width used to smooth the noise (1 = white noise).
    shape : {"cuboid", "ellipsoid"}
    center : tuple of int or None
        Lesion center; None puts it at ``dims // 2``.
    extent : tuple of int
        Side lengths (cuboid) or semi-axes (ellipsoid), in voxels.
    delta : float
        Intensity offset inside the lesion for class 1.
    seed : int
    """

    dims: tuple = (32, 32, 32)
    amplitude: float = 1.0
    correlation: int = 3
    shape: str = "cuboid"
    center: tuple = None
    extent: tuple = (10, 10, 10)
    delta: float = 2.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "extent", tuple(int(e) for e in self.extent))
        if self.center is None:
            object.__setattr__(self, "center", tuple(d // 2 for d in self.dims))
        object.__setattr__(self, "center", tuple(int(c) for c in self.center))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ShapeError(f"dims must be three positive ints, got {self.dims}")
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if len(self.extent) != 3 or min(self.extent) < 1 or len(self.center) != 3:
            raise ShapeError("center and extent need three entries; extents must be positive")
        if self.correlation < 1 or self.amplitude < 0:
            raise ValueError("correlation must be >= 1 and amplitude >= 0")
        lo, hi = self._bounds()
        if any(lo_ < 0 or hi_ > d for lo_, hi_, d in zip(lo, hi, self.dims)):
            raise ShapeError(f"lesion spans {lo}..{hi} and leaves the grid {self.dims}")

    def _bounds(self):
        # half-open voxel box enclosing the lesion
        if self.shape == "cuboid":
            lo = [c - e // 2 for c, e in zip(self.center, self.extent)]
            return lo, [l + e for l, e in zip(lo, self.extent)]
        return [c - e for c, e in zip(self.center, self.extent)], [c + e + 1 for c, e in zip(self.center, self.extent)]

    @property
    def lesion_fraction(self):
        return float(lesion_mask(self).mean())

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lesion_mask(spec):
    """Boolean lesion mask on the spec's grid."""
    mask = np.zeros(spec.dims, dtype=bool)
    lo, hi = spec._bounds()
    if spec.shape == "cuboid":
        mask[tuple(slice(a, b) for a, b in zip(lo, hi))] = True
        return mask
    grid = np.indices(spec.dims, dtype=np.float64)
    r2 = sum(((g - c) / e) ** 2 for g, c, e in zip(grid, spec.center, spec.extent))
    return r2 <= 1.0


def generate_one(spec, label, seed_seq, mask=None):
    """One volume of class ``label`` from its own seed sequence."""
    rng = np.random.default_rng(seed_seq)
    v = rng.standard_normal(spec.dims)
    if spec.correlation > 1:
        v = uniform_filter(v, size=spec.correlation, mode="reflect")
    sd = v.std()
    v = (v - v.mean()) / (sd if sd > 0 else 1.0) * spec.amplitude
    if label == 1 and spec.delta != 0:
        v[lesion_mask(spec) if mask is None else mask] += spec.delta
    return v


def generate(spec, n_per_class):
    """Dataset of ``2 * n_per_class`` volumes with labels alternating 0, 1.

    Sample ``i`` draws from the ``i``-th child of ``SeedSequence(spec.seed)``,
    so samples are independent of generation order and the output is
    bit-identical for a given spec.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    n = 2 * n_per_class
    mask = lesion_mask(spec)
    children = np.random.SeedSequence(spec.seed).spawn(n)
    labels = np.arange(n) % 2
    vols = np.stack([generate_one(spec, int(y), ss, mask) for y, ss in zip(labels, children)])
    masks = np.broadcast_to(mask, vols.shape).copy()
    return LabeledDataset(vols, labels, masks, [f"phantom{i:04d}" for i in range(n)])
