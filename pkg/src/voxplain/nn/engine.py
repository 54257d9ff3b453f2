"""Parameter storage, forward evaluation and reverse-mode gradients."""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ArchitectureError, NonFiniteError, ShapeError
from . import ops
from .graph import class_index

_PARAM_KEYS = {
    "conv3d": ("weight", "bias"),
    "fully-connected": ("weight", "bias"),
    "softmax": ("weight", "bias"),
    "batchnorm": ("gamma", "beta", "running_mean", "running_var"),
}
_BUFFERS = ("running_mean", "running_var")


class ParamStore:
    """Named parameter arrays in graph order.

    Keys are ``"<layer>/<param>"``. Batch-norm running statistics are
    stored alongside the learnable arrays but are not trainable. The
    softmax output layer's ``weight`` has one row per class: row 0 holds
    the NC class weights, row 1 the AD class weights.
    """

    def __init__(self, arrays):
        self.arrays = dict(arrays)

    def __getitem__(self, key):
        return self.arrays[key]

    def __contains__(self, key):
        return key in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def keys(self):
        return self.arrays.keys()

    def items(self):
        return self.arrays.items()

    def layer(self, name):
        prefix = name + "/"
        return {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}

    def trainable_keys(self):
        return [k for k in self.arrays if k.rsplit("/", 1)[1] not in _BUFFERS]

    def copy(self):
        return ParamStore({k: v.copy() for k, v in self.arrays.items()})

    def replace(self, **updates):
        """New store with some arrays swapped out (keys use ``/``)."""
        arrays = dict(self.arrays)
        arrays.update(updates)
        return ParamStore(arrays)

    def count(self, layer=None, trainable=True):
        keys = self.trainable_keys() if trainable else list(self.arrays)
        if layer is not None:
            keys = [k for k in keys if k.startswith(layer + "/")]
        return int(sum(self.arrays[k].size for k in keys))

    def class_weights(self, graph, target):
        """Output-layer weight row ``w_u`` for one class."""
        return self.arrays[f"{graph.output.name}/weight"][class_index(target)]

    def astype(self, dtype):
        return ParamStore({k: v.astype(dtype, copy=False) for k, v in self.arrays.items()})

    def allclose(self, other, **kw):
        return self.arrays.keys() == other.arrays.keys() and all(
            np.allclose(v, other.arrays[k], **kw) for k, v in self.arrays.items()
        )

    def equal(self, other):
        return self.arrays.keys() == other.arrays.keys() and all(
            np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()
        )


def param_shapes(graph):
    """Ordered ``{key: shape}`` for every parameter the graph needs."""
    shapes = {}
    for spec in graph.layers:
        keys = _PARAM_KEYS.get(spec.kind)
        if not keys:
            continue
        in_shape = graph.shapes[spec.inputs[0]]
        if spec.kind == "conv3d":
            k = spec.kernel
            dims = {"weight": (spec.channels, in_shape[0], k, k, k), "bias": (spec.channels,)}
        elif spec.kind in ("fully-connected", "softmax"):
            n_in = int(np.prod(in_shape))
            dims = {"weight": (spec.units, n_in), "bias": (spec.units,)}
        else:
            c = in_shape[0]
            dims = {key: (c,) for key in keys}
        for key in keys:
            shapes[f"{spec.name}/{key}"] = dims[key]
    return shapes


def init_params(graph, seed=0):
    """He-normal weights, zero biases, identity batch norm.

    The output layer starts antisymmetric (``w^NC = -w^AD``). The two-class
    loss gradient keeps it that way, so class scores carry no common-mode
    offset.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for key, shape in param_shapes(graph).items():
        layer, name = key.rsplit("/", 1)
        kind = graph[layer].kind
        if name in ("bias", "beta", "running_mean"):
            arrays[key] = np.zeros(shape)
        elif name in ("gamma", "running_var"):
            arrays[key] = np.ones(shape)
        elif kind == "softmax":
            half = rng.standard_normal(shape[1]) * np.sqrt(1.0 / shape[1])
            w = np.zeros(shape)
            w[1] = half
            w[0] = -half
            arrays[key] = w
        else:
            fan_in = int(np.prod(shape[1:]))
            arrays[key] = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
    return ParamStore(arrays)


def check_params(graph, params):
    expected = param_shapes(graph)
    if set(expected) != set(params.keys()):
        missing = set(expected) ^ set(params.keys())
        raise ShapeError(f"parameter keys do not match the graph: {sorted(missing)}")
    for key, shape in expected.items():
        if params[key].shape != tuple(shape):
            raise ShapeError(f"{key}: expected shape {tuple(shape)}, got {params[key].shape}")
        if not np.all(np.isfinite(params[key])):
            raise NonFiniteError(f"{key} contains non-finite values", layer=key.split("/")[0])


@dataclass
class ActivationCache:
    """Everything one forward pass produced.

    ``scores`` are the bias-free class scores ``sum_u w_u F_u`` (columns NC,
    AD); ``logits`` add the output bias and feed the softmax.
    """

    mode: str
    activations: dict
    logits: np.ndarray
    scores: np.ndarray
    probs: np.ndarray
    aux: dict = field(default_factory=dict, repr=False)
    running: dict = field(default_factory=dict, repr=False)

    def probability(self, target="AD"):
        return self.probs[:, class_index(target)]

    def score(self, target="AD"):
        return self.scores[:, class_index(target)]

    def grid_size(self, layer):
        """Voxel count ``Z`` of a layer's spatial grid."""
        shp = self.activations[layer].shape
        if len(shp) != 5:
            raise ShapeError(f"layer {layer!r} has no spatial grid")
        return int(shp[2] * shp[3] * shp[4])


@dataclass
class GradCache:
    """Gradient of one class score with respect to one layer's activations."""

    layer: str
    target: int
    grad: np.ndarray


def as_batch(graph, x):
    """Coerce a volume or batch of volumes to ``(N, C, D, H, W)``."""
    x = np.asarray(x)
    c = graph.input_shape[0]
    if x.ndim == 3 and c == 1:
        x = x[None, None]
    elif x.ndim == 4 and c == 1:
        x = x[:, None]
    elif x.ndim == 4:
        x = x[None]
    if x.ndim != 5 or x.shape[1:] != graph.input_shape:
        raise ShapeError(f"{graph.name} expects input {graph.input_shape}, got {x.shape}")
    return x


def forward(graph, params, x, mode="eval", rng=None, overrides=None, dtype=np.float64, check_finite=True):
    """Run the network on one volume or a batch.

    Parameters
    ----------
    graph : ModelGraph
    params : ParamStore
    x : ndarray
        ``(D, H, W)``, ``(N, D, H, W)`` or ``(N, C, D, H, W)``.
    mode : {"eval", "train"}
        Eval uses running batch-norm statistics and disables dropout.
    rng : numpy Generator, optional
        Dropout masks in train mode.
    overrides : dict, optional
        ``{layer: array}`` replacing a layer's output (used by gradient
        checks to perturb intermediate activations).

    Returns
    -------
    ActivationCache
    """
    if mode not in ("eval", "train"):
        raise ValueError(f"mode must be 'eval' or 'train', got {mode!r}")
    train = mode == "train"
    x = as_batch(graph, x).astype(dtype, copy=False)
    overrides = overrides or {}
    p = params.arrays if dtype == np.float64 else {k: v.astype(dtype) for k, v in params.arrays.items()}
    if train and rng is None:
        rng = np.random.default_rng(0)
    acts, aux, running = {}, {}, {}
    logits = scores = None
    for spec in graph.layers:
        name, kind = spec.name, spec.kind
        ins = [acts[s] for s in spec.inputs]
        if kind == "input":
            out = x
        elif kind == "conv3d":
            out = ops.conv3d_forward(ins[0], p[f"{name}/weight"], p[f"{name}/bias"], spec.padding)
        elif kind == "maxpool3d":
            out, aux[name] = ops.maxpool3d_forward(ins[0], spec.kernel, spec.ceil_mode)
        elif kind == "batchnorm":
            out, aux[name], upd = ops.batchnorm_forward(
                ins[0], p[f"{name}/gamma"], p[f"{name}/beta"],
                p[f"{name}/running_mean"], p[f"{name}/running_var"], train,
            )
            if upd is not None:
                running[f"{name}/running_mean"], running[f"{name}/running_var"] = upd
        elif kind == "relu":
            out = ops.relu_forward(ins[0])
        elif kind == "residual-add":
            out = ins[0] + ins[1]
        elif kind == "global-average-pool":
            out = ops.gap_forward(ins[0])
        elif kind == "fully-connected":
            out = ops.dense_forward(ins[0], p[f"{name}/weight"], p[f"{name}/bias"])
        elif kind == "dropout":
            if train and spec.rate > 0:
                mask = (rng.random(ins[0].shape) >= spec.rate) / (1.0 - spec.rate)
                aux[name] = mask.astype(dtype)
                out = ins[0] * aux[name]
            else:
                out = ins[0]
        elif kind == "softmax":
            flat = ins[0].reshape(ins[0].shape[0], -1)
            scores = flat @ p[f"{name}/weight"].T
            logits = scores + p[f"{name}/bias"]
            out = ops.softmax(logits)
        else:  # pragma: no cover - LayerSpec validates kinds
            raise ArchitectureError(f"unsupported layer kind {kind}")
        if name in overrides:
            out = np.asarray(overrides[name], dtype=dtype).reshape(out.shape)
        if check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite activation in layer {name!r}", layer=name)
        acts[name] = out
    return ActivationCache(mode, acts, logits, scores, acts[graph.output.name], aux, running)


def backward(graph, params, cache, dlogits, stop_at=None, need_params=True):
    """Reverse-mode sweep from the output logits.

    Parameters
    ----------
    dlogits : ndarray, shape (N, n_classes)
        Gradient of the objective with respect to the pre-softmax logits.
    stop_at : str, optional
        Stop as soon as this layer's activation gradient is complete.
    need_params : bool
        Whether to accumulate parameter gradients.

    Returns
    -------
    node_grads : dict
        ``{layer: d objective / d activation}`` for every visited layer.
    param_grads : dict
        ``{"<layer>/<param>": gradient}`` (empty if not requested).
    """
    p = params.arrays
    acts = cache.activations
    dtype = cache.probs.dtype
    if dtype != np.float64:
        p = {k: v.astype(dtype) for k, v in p.items()}
    names = graph.names
    stop_idx = names.index(stop_at) if stop_at is not None else 0
    node_grads = {}
    pgrads = {}

    def accumulate(src, g):
        if src in node_grads:
            node_grads[src] = node_grads[src] + g
        else:
            node_grads[src] = g

    out = graph.output
    x_in = acts[out.inputs[0]]
    dx, dw, db = ops.dense_backward(np.asarray(dlogits, dtype=dtype), x_in, p[f"{out.name}/weight"], need_params)
    if need_params:
        pgrads[f"{out.name}/weight"], pgrads[f"{out.name}/bias"] = dw, db
    accumulate(out.inputs[0], dx)

    for idx in range(len(names) - 2, stop_idx, -1):
        spec = graph.layers[idx]
        name, kind = spec.name, spec.kind
        g = node_grads.get(name)
        if g is None or kind == "input":
            continue
        ins = spec.inputs
        if kind == "conv3d":
            need_input = graph[ins[0]].kind != "input"
            dx, dw, db = ops.conv3d_backward(
                g, acts[ins[0]], p[f"{name}/weight"], spec.padding, need_params, need_input
            )
            if need_params:
                pgrads[f"{name}/weight"], pgrads[f"{name}/bias"] = dw, db
            if dx is None:
                continue
        elif kind == "maxpool3d":
            dx = ops.maxpool3d_backward(g, cache.aux[name], acts[ins[0]].shape, spec.kernel, spec.ceil_mode)
        elif kind == "batchnorm":
            dx, dgamma, dbeta = ops.batchnorm_backward(g, p[f"{name}/gamma"], cache.aux[name], need_params)
            if need_params:
                pgrads[f"{name}/gamma"], pgrads[f"{name}/beta"] = dgamma, dbeta
        elif kind == "relu":
            dx = ops.relu_backward(g, acts[ins[0]])
        elif kind == "residual-add":
            accumulate(ins[0], g)
            accumulate(ins[1], g)
            continue
        elif kind == "global-average-pool":
            dx = ops.gap_backward(g, acts[ins[0]].shape)
        elif kind == "fully-connected":
            dx, dw, db = ops.dense_backward(g, acts[ins[0]], p[f"{name}/weight"], need_params)
            if need_params:
                pgrads[f"{name}/weight"], pgrads[f"{name}/bias"] = dw, db
        elif kind == "dropout":
            dx = g * cache.aux[name] if name in cache.aux else g
        else:  # pragma: no cover
            raise ArchitectureError(f"cannot differentiate through {kind}")
        accumulate(ins[0], dx)
    return node_grads, pgrads


def backward_score_to_layer(graph, params, cache, target, layer):
    """Gradient of the pre-softmax class score with respect to a layer.

    Parameters
    ----------
    cache : ActivationCache
        From an eval-mode :func:`forward` with the same graph and params.
    target : {"AD", "NC"} or int
    layer : str
        Layer name, or ``"last-conv"`` for the graph's feature layer.

    Returns
    -------
    GradCache
    """
    if cache.mode != "eval":
        raise ValueError("score gradients are defined on eval-mode caches")
    layer = graph.resolve_layer(layer)
    if layer == graph.output.name or not graph.on_output_path(layer):
        raise ArchitectureError(f"layer {layer!r} is not on the path to the output")
    cls = class_index(target)
    seed = np.zeros_like(cache.logits)
    seed[:, cls] = 1.0
    grads, _ = backward(graph, params, cache, seed, stop_at=layer, need_params=False)
    g = grads.get(layer)
    if g is None:
        g = np.zeros_like(cache.activations[layer])
    return GradCache(layer, cls, g)


def cross_entropy(probs, label):
    """Two-class cross entropy ``-log p(label)`` with p clamped at 1e-12.

    ``probs`` is one probability vector (columns NC, AD) or a batch of
    them; for a batch the mean loss is returned.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        return float(-np.log(max(probs[class_index(label)], 1e-12)))
    labels = np.asarray(label, dtype=np.int64)
    picked = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(picked, 1e-12))))


def cross_entropy_grad(probs, labels):
    """Gradient of the mean two-class cross entropy w.r.t. the logits.

    The NC column is the exact negation of the AD column, which keeps an
    antisymmetric output layer antisymmetric.
    """
    labels = np.asarray(labels)
    g = (probs[:, 1] - (labels == 1)) / len(labels)
    return np.stack([-g, g], axis=1)
