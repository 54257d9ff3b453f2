"""Nested ultrametric segmentation hierarchies of 3D volumes.

Pipeline: :func:`oversegment` (seeded watershed on the gradient-magnitude
field) -> :func:`build_merge_tree` (greedy region-adjacency agglomeration)
-> :func:`extract_hierarchy` (tree cuts at quantiles of the merge heights).
"""

from dataclasses import dataclass
import heapq

import numpy as np

from .exceptions import DataError, ShapeError

MAX_LEVELS = 20

__all__ = [
    "MergeTree",
    "SegmentationHierarchy",
    "oversegment",
    "build_merge_tree",
    "cut_tree",
    "extract_hierarchy",
    "segment",
    "is_partition",
    "is_nested",
]


def _neighbor_offsets(shape):
    sx, sy, sz = shape
    # flat-index steps in C order for +-x, +-y, +-z
    return ((sy * sz, 0), (-sy * sz, 0), (sz, 1), (-sz, 1), (1, 2), (-1, 2))


def oversegment(volume, n_seeds=300, seed=0):
    """Seeded watershed supervoxels.

    Seeds are ``n_seeds`` distinct voxels drawn at random. Regions are
    flooded in order of gradient magnitude; ties at equal magnitude go to
    the neighbor with the smaller intensity step, so a region never spills
    across a sharp edge while a same-intensity path is still open.

    Parameters
    ----------
    volume : ndarray, shape (X, Y, Z)
    n_seeds : int
        Between 1 and the voxel count.
    seed : int
        Seed for the seed-voxel draw.

    Returns
    -------
    ndarray of int64
        Labels ``1..K`` with every region non-empty and 6-connected.
    """
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim != 3:
        raise ShapeError(f"expected a 3D volume, got shape {v.shape}")
    n_vox = v.size
    if not 1 <= n_seeds <= n_vox:
        raise ValueError(f"n_seeds must lie in [1, {n_vox}], got {n_seeds}")
    rng = np.random.default_rng(seed)
    grad = np.sqrt(sum(g * g for g in np.gradient(v))) if min(v.shape) > 1 else _grad_small(v)
    flat_v = v.ravel().tolist()
    flat_g = grad.ravel().tolist()
    coords = np.indices(v.shape).reshape(3, -1).tolist()
    labels = [0] * n_vox
    seeds = np.sort(rng.choice(n_vox, size=n_seeds, replace=False))
    heap = []
    counter = 0
    for lab, s in enumerate(seeds, start=1):
        heap.append((flat_g[s], 0.0, counter, int(s), lab))
        counter += 1
    heapq.heapify(heap)
    steps = _neighbor_offsets(v.shape)
    limits = v.shape
    while heap:
        _, _, _, idx, lab = heapq.heappop(heap)
        if labels[idx]:
            continue
        labels[idx] = lab
        here = flat_v[idx]
        for step, axis in steps:
            c = coords[axis][idx] + (1 if step > 0 else -1)
            if c < 0 or c >= limits[axis]:
                continue
            nb = idx + step
            if labels[nb]:
                continue
            heapq.heappush(heap, (flat_g[nb], abs(flat_v[nb] - here), counter, nb, lab))
            counter += 1
    return _relabel_sequential(np.asarray(labels, dtype=np.int64).reshape(v.shape))


def _grad_small(v):
    # np.gradient needs >= 2 samples per axis
    parts = [np.gradient(v, axis=a) if v.shape[a] > 1 else np.zeros_like(v) for a in range(3)]
    return np.sqrt(sum(p * p for p in parts))


def _relabel_sequential(labels):
    _, inv = np.unique(labels, return_inverse=True)
    return (inv.reshape(labels.shape) + 1).astype(np.int64)


@dataclass(frozen=True)
class MergeTree:
    """Binary agglomeration of ``n_leaves`` regions.

    Leaves are the base labels ``1..K``; merge ``i`` creates node
    ``K + 1 + i`` from ``children[i]``. ``heights`` are ultrametric: a
    merge is never lower than either child's merge. ``links`` keep the raw
    boundary strengths before that clamp.
    """

    n_leaves: int
    children: np.ndarray
    heights: np.ndarray
    links: np.ndarray

    def __len__(self):
        return len(self.heights)

    def node_height(self, node):
        return 0.0 if node <= self.n_leaves else float(self.heights[node - self.n_leaves - 1])


def _boundary_stats(labels, volume):
    """Sum and count of |intensity step| over faces between distinct labels."""
    keys, diffs = [], []
    k = int(labels.max()) + 1
    for axis in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[axis] = slice(None, -1)
        b[axis] = slice(1, None)
        la, lb = labels[tuple(a)], labels[tuple(b)]
        diff = np.abs(volume[tuple(a)] - volume[tuple(b)])
        sel = la != lb
        lo = np.minimum(la[sel], lb[sel])
        hi = np.maximum(la[sel], lb[sel])
        keys.append(lo * k + hi)
        diffs.append(diff[sel])
    keys = np.concatenate(keys)
    diffs = np.concatenate(diffs)
    uniq, inv = np.unique(keys, return_inverse=True)
    sums = np.bincount(inv, weights=diffs)
    counts = np.bincount(inv)
    return {(int(u // k), int(u % k)): (float(s), int(c)) for u, s, c in zip(uniq, sums, counts)}


def build_merge_tree(labels, volume):
    """Greedy agglomeration on the region adjacency graph.

    The pair with the weakest boundary (mean absolute intensity step across
    shared faces) merges first; ties go to the smaller id pair. A merged
    region's boundary to each neighbor pools the faces of both parts.
    """
    labels = np.asarray(labels)
    volume = np.asarray(volume, dtype=np.float64)
    if labels.shape != volume.shape:
        raise ShapeError(f"labels {labels.shape} and volume {volume.shape} differ in shape")
    n = int(labels.max())
    if labels.min() < 1 or len(np.unique(labels)) != n:
        raise DataError("labels must be a partition numbered 1..K without gaps")
    if n == 1:
        return MergeTree(1, np.zeros((0, 2), dtype=np.int64), np.zeros(0), np.zeros(0))
    adj = {r: {} for r in range(1, n + 1)}
    heap = []
    for (a, b), (s, c) in _boundary_stats(labels, volume).items():
        adj[a][b] = adj[b][a] = (s, c)
        heap.append((s / c, a, b))
    heapq.heapify(heap)
    node_h = {r: 0.0 for r in range(1, n + 1)}
    children, heights, links = [], [], []
    next_id = n + 1
    while heap:
        link, a, b = heapq.heappop(heap)
        if a not in adj or b not in adj[a]:
            continue
        s, c = adj[a][b]
        if s / c != link:
            continue
        h = max(link, node_h[a], node_h[b])
        new = next_id
        next_id += 1
        merged = {}
        for src in (a, b):
            for nb, (ns, nc) in adj.pop(src).items():
                if nb in (a, b):
                    continue
                del adj[nb][src]
                ps, pc = merged.get(nb, (0.0, 0))
                merged[nb] = (ps + ns, pc + nc)
        adj[new] = merged
        for nb, (ns, nc) in merged.items():
            adj[nb][new] = (ns, nc)
            heapq.heappush(heap, (ns / nc, min(nb, new), max(nb, new)))
        node_h[new] = h
        children.append((a, b))
        heights.append(h)
        links.append(link)
    if len(children) != n - 1:
        raise DataError("region adjacency graph is disconnected")
    return MergeTree(n, np.asarray(children, dtype=np.int64), np.asarray(heights), np.asarray(links))


def cut_tree(tree, base, height):
    """Labeling obtained by applying every merge with height <= ``height``.

    Segments are numbered ``1..K`` by their smallest base label.
    """
    parent = np.arange(tree.n_leaves + len(tree) + 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, ((a, b), h) in enumerate(zip(tree.children, tree.heights)):
        if h <= height:
            node = tree.n_leaves + 1 + i
            parent[find(a)] = node
            parent[find(b)] = node
    roots = np.array([find(i) for i in range(1, tree.n_leaves + 1)])
    # first occurrence in leaf order gives the smallest base label per root
    _, first, inv = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(1, len(first) + 1)
    leaf_to_seg = np.concatenate([[0], rank[inv]])
    return leaf_to_seg[np.asarray(base)]


@dataclass(frozen=True)
class SegmentationHierarchy:
    """Levels ``H_1..H_N`` from fine to coarse.

    ``levels[n]`` labels every voxel ``1..K_n``; ``cut_heights[n]`` is the
    tree height the level was cut at (``-inf`` for the base level).
    """

    levels: tuple
    cut_heights: tuple

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def counts(self):
        return [int(lv.max()) for lv in self.levels]

    @property
    def shape(self):
        return self.levels[0].shape

    def __iter__(self):
        return iter(self.levels)

    def __len__(self):
        return len(self.levels)


def extract_hierarchy(tree, base, n_levels=10):
    """Cut the merge tree into at most ``n_levels`` nested labelings.

    Level 1 is ``base``. Level ``n + 1`` cuts the tree at the
    ``n / n_levels`` quantile of the merge heights (an order statistic, so
    the cut lands on an actual merge). Levels identical to their
    predecessor are dropped, so the result may hold fewer levels.
    """
    if not 1 <= n_levels <= MAX_LEVELS:
        raise ValueError(f"n_levels must lie in [1, {MAX_LEVELS}], got {n_levels}")
    base = np.asarray(base, dtype=np.int64)
    if int(base.max()) != tree.n_leaves:
        raise ShapeError("base labeling does not match the tree's leaves")
    levels = [base]
    cuts = [-np.inf]
    if len(tree) and n_levels > 1:
        qs = np.arange(1, n_levels) / n_levels
        for t in np.quantile(tree.heights, qs, method="lower"):
            lab = cut_tree(tree, base, t)
            if int(lab.max()) < int(levels[-1].max()):
                levels.append(lab)
                cuts.append(float(t))
    return SegmentationHierarchy(tuple(levels), tuple(cuts))


def segment(volume, n_seeds=300, n_levels=10, seed=0):
    """Oversegment, agglomerate and cut in one call."""
    v = np.asarray(volume, dtype=np.float64)
    base = oversegment(v, n_seeds=min(n_seeds, v.size), seed=seed)
    tree = build_merge_tree(base, v)
    return extract_hierarchy(tree, base, n_levels)


def is_partition(labels):
    """Labels cover the grid as ``1..K`` with no empty label."""
    labels = np.asarray(labels)
    k = int(labels.max())
    return labels.min() >= 1 and np.all(np.bincount(labels.ravel(), minlength=k + 1)[1:] > 0)


def is_nested(fine, coarse):
    """Every fine segment lies inside exactly one coarse segment."""
    pairs = np.unique(np.stack([np.ravel(fine), np.ravel(coarse)]), axis=1)
    return len(np.unique(pairs[0])) == pairs.shape[1]
