"""Shared fixtures: random toy networks and reference (oracle) computations."""

import numpy as np
import pytest

from voxplain.nn import ParamStore, forward, init_params
from voxplain.nn.graph import LayerSpec, ModelGraph

MAX_ACTIVATIONS = 1000


def _total_activations(graph):
    return sum(int(np.prod(s)) for s in graph.shapes.values())


def random_toy(rng, gap=None, max_conv=3, size=None, max_total=MAX_ACTIVATIONS):
    """Random small graph plus fully random parameters.

    At most ``max_conv`` convolutions and ``max_total`` activations. With
    ``gap=True`` the head is global average pooling straight into the
    softmax; ``gap=False`` uses a dense head; None picks at random.
    """
    while True:
        graph = _draw_graph(rng, gap, max_conv, size)
        if _total_activations(graph) <= max_total:
            break
    return graph, random_params(graph, rng)


def _draw_graph(rng, gap, max_conv, size):
    n = int(size or rng.integers(3, 6))
    layers = [LayerSpec("input", "input")]
    tail, ch, spatial = "input", 1, n
    n_conv = int(rng.integers(1, max_conv + 1))
    pooled = False
    feature = None
    for i in range(n_conv):
        c = int(rng.integers(1, 4))
        pad = 1 if spatial < 3 else int(rng.integers(0, 2))
        name = f"conv{i}"
        residual = ch == c and pad == 1 and rng.random() < 0.4
        skip = tail
        layers.append(LayerSpec(name, "conv3d", (tail,), channels=c, kernel=3, padding=pad))
        tail, ch = name, c
        spatial = spatial + 2 * pad - 2
        if residual:
            layers.append(LayerSpec(f"add{i}", "residual-add", (skip, tail)))
            tail = f"add{i}"
        if rng.random() < 0.5:
            layers.append(LayerSpec(f"bn{i}", "batchnorm", (tail,)))
            tail = f"bn{i}"
        if rng.random() < 0.8:
            layers.append(LayerSpec(f"relu{i}", "relu", (tail,)))
            tail = f"relu{i}"
        feature = tail
        if not pooled and spatial >= 2 and i < n_conv - 1 and rng.random() < 0.4:
            layers.append(LayerSpec(f"pool{i}", "maxpool3d", (tail,), kernel=2, ceil_mode=bool(rng.random() < 0.5)))
            tail = f"pool{i}"
            spatial = -(-spatial // 2) if layers[-1].ceil_mode else spatial // 2
            pooled = True
    use_gap = bool(rng.random() < 0.5) if gap is None else gap
    if use_gap:
        layers.append(LayerSpec("gap", "global-average-pool", (tail,)))
        layers.append(LayerSpec("output", "softmax", ("gap",), units=2))
    else:
        layers.append(LayerSpec("fc", "fully-connected", (tail,), units=3))
        layers.append(LayerSpec("fc_relu", "relu", ("fc",)))
        layers.append(LayerSpec("output", "softmax", ("fc_relu",), units=2))
    return ModelGraph("toy", (1, n, n, n), tuple(layers), feature_layer=feature)


def random_params(graph, rng):
    """Every parameter random (running variances kept positive)."""
    base = init_params(graph, seed=int(rng.integers(1 << 31)))
    arrays = {}
    for key, val in base.items():
        if key.endswith("running_var"):
            arrays[key] = rng.uniform(0.5, 2.0, size=val.shape)
        elif key.endswith("gamma"):
            arrays[key] = rng.uniform(0.5, 1.5, size=val.shape)
        else:
            arrays[key] = rng.normal(0.0, 0.5, size=val.shape)
    return ParamStore(arrays)


def relu_and_pool_state(graph, cache):
    """Activation pattern that determines which linear piece the network is on."""
    state = []
    for spec in graph.layers:
        if spec.kind == "relu":
            state.append(cache.activations[spec.inputs[0]] > 0)
        elif spec.kind == "maxpool3d":
            state.append(cache.aux[spec.name])
    return state


def finite_difference_score_grad(graph, params, x, layer, cls, h=1e-4):
    """Central differences of ``Score(cls)`` (pre-softmax) w.r.t. a layer.

    Returns ``(fd, kink)``: ``kink`` flags elements whose +h / -h runs
    landed on different ReLU / max-pool pieces, where central differences
    are not a derivative estimate.
    """
    base = forward(graph, params, x)
    act = base.activations[layer]
    fd = np.zeros(act.shape)
    kink = np.zeros(act.shape, dtype=bool)
    flat = act.ravel()
    for i in range(flat.size):
        vals, states = [], []
        for sign in (1.0, -1.0):
            pert = flat.copy()
            pert[i] += sign * h
            c = forward(graph, params, x, overrides={layer: pert.reshape(act.shape)})
            vals.append(c.logits[0, cls])
            states.append(relu_and_pool_state(graph, c))
        idx = np.unravel_index(i, act.shape)
        fd[idx] = (vals[0] - vals[1]) / (2 * h)
        kink[idx] = any(not np.array_equal(a, b) for a, b in zip(*states))
    return fd, kink


def linear_score_coefficients(weight, bias, head_w, head_b, padding, shape):
    """Exact affine logits of conv -> GAP -> softmax-layer, by explicit loops.

    Returns ``(coef, const)`` with ``logit[c] = const[c] + sum(coef[c] * V)``.
    """
    n_out, _, k, _, _ = weight.shape
    pad_shape = tuple(s + 2 * padding for s in shape)
    out_shape = tuple(s - k + 1 for s in pad_shape)
    z = int(np.prod(out_shape))
    coef_pad = np.zeros((head_w.shape[0],) + pad_shape)
    for c in range(head_w.shape[0]):
        for u in range(n_out):
            kern = head_w[c, u] * weight[u, 0] / z
            for p in np.ndindex(*out_shape):
                coef_pad[c, p[0]:p[0] + k, p[1]:p[1] + k, p[2]:p[2] + k] += kern
    p = padding
    coef = coef_pad[:, p:p + shape[0], p:p + shape[1], p:p + shape[2]] if p else coef_pad
    const = head_w @ bias + head_b
    return coef, const


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


def record_acceptance(number, ok, detail):
    _ACCEPTANCE[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
