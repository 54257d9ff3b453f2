"""Voxel attribution heatmaps for a trained volumetric classifier.

Two perturbation methods re-evaluate the model on occluded copies of the
volume (cubic neighborhoods, or segments of a hierarchy); two activation
methods weight the feature maps of a convolutional layer (class
activation mapping and its gradient-weighted generalisation).

Every heatmap is non-negative and shaped like the explained volume.
Perturbation passes are independent, so they fan out over a thread pool
sized by ``VOXPLAIN_THREADS``; results do not depend on completion order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import os
import threading

import numpy as np

from .exceptions import ArchitectureError, ShapeError
from .nn.engine import as_batch, backward_score_to_layer, forward
from .nn.graph import class_index
from .tensor import VoxelRegion, occlude, trilinear_upsample

__all__ = [
    "METHODS",
    "AttributionRequest",
    "PassCounter",
    "baseline_occlusion",
    "sa_hierarchical",
    "class_activation_field",
    "cam",
    "grad_cam",
    "explain",
    "n_workers",
]

METHODS = ("baseline", "sa-hier", "cam", "grad-cam")


def n_workers(workers=None):
    """Worker count: explicit value, else ``VOXPLAIN_THREADS``, else 1."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("VOXPLAIN_THREADS")
    return max(1, int(env)) if env else 1


class PassCounter:
    """Thread-safe tally of model forward passes."""

    def __init__(self):
        self.count = 0
        self._lock = threading.Lock()

    def add(self, n=1):
        with self._lock:
            self.count += n


def _volume(graph, volume):
    v = np.asarray(volume, dtype=np.float64)
    as_batch(graph, v)  # validates dims
    if v.ndim != 3:
        raise ShapeError(f"explain one volume at a time, got shape {v.shape}")
    return v


def _prober(graph, params, cls, counter):
    def prob(vol):
        if counter is not None:
            counter.add()
        return float(forward(graph, params, vol).probs[0, cls])

    return prob


def _map(fn, items, workers):
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _centers(n, stride):
    # stride > 1: centers sit mid-block so clipped cubes of half-extent
    # (stride - 1) / 2 tile the axis
    start = (stride - 1) // 2 if stride > 1 else 0
    c = np.arange(start, n, stride)
    return c if len(c) else np.array([min(start, n - 1)])


def baseline_occlusion(graph, params, volume, half_extent=3, fill=0.0, stride=1, target="AD",
                       workers=None, counter=None):
    """Occlusion sensitivity with cubic neighborhoods.

    ``C[x, y, z] = |P(V occluded around (x, y, z)) - P(V)|`` with ``P`` the
    target-class probability. The cube spans ``half_extent`` voxels each
    way (3 gives 7x7x7) and is clipped at the borders. With ``stride > 1``
    only a subgrid of centers is evaluated and every voxel takes the value
    of its nearest center.
    """
    v = _volume(graph, volume)
    if half_extent < 0:
        raise ValueError("half_extent must be >= 0")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cls = class_index(target)
    prob = _prober(graph, params, cls, counter)
    ref = prob(v)
    axes = [_centers(n, stride) for n in v.shape]
    centers = [(a, b, c) for a in axes[0] for b in axes[1] for c in axes[2]]

    def delta(center):
        region = VoxelRegion.cuboid(center, half_extent)
        return abs(prob(occlude(v, region, fill)) - ref)

    values = np.asarray(_map(delta, centers, n_workers(workers))).reshape([len(a) for a in axes])
    if stride == 1:
        return values
    nearest = [np.abs(np.arange(n)[:, None] - a[None, :]).argmin(axis=1) for n, a in zip(v.shape, axes)]
    return values[np.ix_(*nearest)]


def sa_hierarchical(graph, params, volume, hierarchy, fill=0.0, target="AD", workers=None, counter=None):
    """Sensitivity analysis over a segmentation hierarchy.

    Each segment of each level is occluded in turn; every voxel receives
    the mean over levels of ``|P(V with its segment occluded) - P(V)|``.
    Costs one reference pass plus one pass per segment.

    Parameters
    ----------
    hierarchy : SegmentationHierarchy or sequence of label grids
        Each level labels the volume's voxels ``1..K_n``.
    """
    v = _volume(graph, volume)
    levels = [np.asarray(lv) for lv in hierarchy]
    if not levels:
        raise ValueError("hierarchy has no levels")
    for lv in levels:
        if lv.shape != v.shape:
            raise ShapeError(f"hierarchy level {lv.shape} does not match volume {v.shape}")
    cls = class_index(target)
    prob = _prober(graph, params, cls, counter)
    ref = prob(v)
    jobs = [(n, k) for n, lv in enumerate(levels) for k in range(1, int(lv.max()) + 1)]

    def delta(job):
        n, k = job
        return abs(prob(occlude(v, levels[n] == k, fill)) - ref)

    deltas = _map(delta, jobs, n_workers(workers))
    heat = np.zeros(v.shape)
    pos = 0
    for lv in levels:
        k = int(lv.max())
        per_segment = np.concatenate([[0.0], deltas[pos:pos + k]])
        heat += per_segment[lv]
        pos += k
    return heat / len(levels)


def class_activation_field(graph, params, volume, target="AD"):
    """Signed map ``sum_u w_u f_u(x, y, z)`` on the feature layer of a GAP model.

    Its spatial mean is the bias-free class score.
    """
    if not graph.is_gap():
        raise ArchitectureError(
            f"{graph.name}: class activation mapping needs global average pooling feeding the softmax"
        )
    v = _volume(graph, volume)
    cache = forward(graph, params, v)
    f = cache.activations[graph.feature_layer][0]
    w = params.class_weights(graph, target)
    return np.tensordot(w, f, axes=(0, 0)), cache


def cam(graph, params, volume, target="AD"):
    """Class activation map.

    Returns
    -------
    coarse : ndarray
        ``|sum_u w_u f_u|`` on the feature-layer grid.
    upsampled : ndarray
        ``coarse`` trilinearly resampled to the volume grid.
    """
    field, _ = class_activation_field(graph, params, volume, target)
    coarse = np.abs(field)
    return coarse, trilinear_upsample(coarse, np.shape(volume))


def grad_cam(graph, params, volume, layer="last-conv", target="AD"):
    """Gradient-weighted class activation map.

    Unit weights are the spatial means of ``d Score / d f_u`` over the
    layer's grid; the map is ``|sum_u a_u f_u|``. Any spatial layer on the
    path to the output may be used. Maps from layers below the last
    convolution can be altered by the layers above them.

    Returns
    -------
    (coarse, upsampled)
    """
    v = _volume(graph, volume)
    layer = graph.resolve_layer(layer)
    if len(graph.shapes[layer]) != 4:
        raise ArchitectureError(f"layer {layer!r} has no spatial grid")
    cache = forward(graph, params, v)
    g = backward_score_to_layer(graph, params, cache, target, layer).grad[0]
    f = cache.activations[layer][0]
    weights = g.mean(axis=(1, 2, 3))
    coarse = np.abs(np.tensordot(weights, f, axes=(0, 0)))
    return coarse, trilinear_upsample(coarse, v.shape)


@dataclass(frozen=True)
class AttributionRequest:
    """Method choice plus its parameters, as accepted by :func:`explain`."""

    method: str
    target: str = "AD"
    half_extent: int = 3
    fill: float = 0.0
    stride: int = 1
    layer: str = "last-conv"
    hierarchy: object = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.half_extent < 0:
            raise ValueError("half_extent must be >= 0")
        if self.method == "sa-hier" and self.hierarchy is None:
            raise ValueError("sa-hier needs a segmentation hierarchy")
        class_index(self.target)


def explain(graph, params, volume, request, workers=None, counter=None):
    """Run one :class:`AttributionRequest`.

    Returns ``(heatmap, coarse)``; ``coarse`` is None for the
    perturbation methods.
    """
    r = request
    if r.method == "baseline":
        h = baseline_occlusion(graph, params, volume, r.half_extent, r.fill, r.stride, r.target, workers, counter)
        return h, None
    if r.method == "sa-hier":
        return sa_hierarchical(graph, params, volume, r.hierarchy, r.fill, r.target, workers, counter), None
    if r.method == "cam":
        coarse, up = cam(graph, params, volume, r.target)
        return up, coarse
    coarse, up = grad_cam(graph, params, volume, r.layer, r.target)
    return up, coarse
