"""Builders for the four 3D-CNN architectures at two grid-size profiles.

``paper-110`` takes 110^3 inputs and reproduces the last-conv grids of the
full-size models (3^3 VGG, 14^3 ResNet / ResNet-GAP, 55^3 Shallow-GAP).
``desk-32`` takes 32^3 inputs with narrow layers so it trains on a laptop
CPU in minutes.
"""

from .graph import LayerSpec, ModelGraph

PROFILES = {
    "paper-110": {
        "dims": 110,
        # VGG: unpadded convolutions and floor pooling as in the original
        # VGG-style AD classifier; only this layout ends on a 3^3 grid.
        "vgg": {"padding": 0, "ceil_mode": False, "blocks": ((8, 1), (16, 2), (32, 3), (64, 3)), "fc": (128, 64)},
        "resnet": {"channels": (32, 64, 64, 128), "fc": 128},
    },
    "desk-32": {
        "dims": 32,
        "vgg": {"padding": 1, "ceil_mode": True, "blocks": ((4, 1), (8, 2), (8, 3), (16, 3)), "fc": (32, 16)},
        "resnet": {"channels": (2, 8, 8, 8), "fc": 16},
    },
}


def _profile(scale):
    try:
        return PROFILES[scale]
    except KeyError:
        raise ValueError(f"unknown profile {scale!r}; expected one of {sorted(PROFILES)}") from None


class _Stack:
    """Append-only helper that chains layers and remembers the tail."""

    def __init__(self):
        self.layers = [LayerSpec("input", "input")]
        self.tail = "input"

    def add(self, name, kind, inputs=None, **kw):
        spec = LayerSpec(name, kind, inputs=(self.tail,) if inputs is None else inputs, **kw)
        self.layers.append(spec)
        self.tail = name
        return name

    def conv(self, name, channels, padding=1):
        return self.add(name, "conv3d", channels=channels, kernel=3, padding=padding)

    def voxres(self, name, channels):
        # pre-activation residual block: bn-relu-conv-bn-relu-conv + identity
        skip = self.tail
        self.add(f"{name}_bn1", "batchnorm")
        self.add(f"{name}_relu1", "relu")
        self.conv(f"{name}_conv1", channels)
        self.add(f"{name}_bn2", "batchnorm")
        self.add(f"{name}_relu2", "relu")
        self.conv(f"{name}_conv2", channels)
        return self.add(f"{name}_out", "residual-add", inputs=(skip, f"{name}_conv2"))


def build_vgg3d(scale="desk-32"):
    """Four conv+pool blocks, then FC, batch norm, dropout, FC and softmax."""
    prof = _profile(scale)
    cfg = prof["vgg"]
    st = _Stack()
    for b, (channels, n_conv) in enumerate(cfg["blocks"], start=1):
        suffixes = [""] if n_conv == 1 else "abc"[:n_conv]
        for s in suffixes:
            st.conv(f"conv{b}{s}", channels, padding=cfg["padding"])
            st.add(f"relu{b}{s}", "relu")
        feature = st.tail
        st.add(f"pool{b}", "maxpool3d", kernel=2, ceil_mode=cfg["ceil_mode"])
    fc1, fc2 = cfg["fc"]
    st.add("fc5", "fully-connected", units=fc1)
    st.add("bn5", "batchnorm")
    st.add("relu5", "relu")
    st.add("dropout5", "dropout", rate=0.5)
    st.add("fc6", "fully-connected", units=fc2)
    st.add("relu6", "relu")
    st.add("output", "softmax", units=2)
    dims = prof["dims"]
    return ModelGraph("3D-VGGNet", (1, dims, dims, dims), st.layers, feature_layer=feature)


def _resnet_trunk(prof, shallow=False):
    c1, c2, c3, c4 = prof["resnet"]["channels"]
    st = _Stack()
    st.conv("conv1a", c1)
    st.add("bn1a", "batchnorm")
    st.add("relu1a", "relu")
    st.conv("conv1b", c1)
    st.add("bn1b", "batchnorm")
    st.add("relu1b", "relu")
    st.add("pool1", "maxpool3d", kernel=2)
    st.conv("conv2", c2)
    st.voxres("voxres2", c2)
    st.voxres("voxres3", c2)
    st.add("bn4", "batchnorm")
    st.add("relu4", "relu")
    if shallow:
        return st
    st.add("pool4", "maxpool3d", kernel=2)
    st.conv("conv4", c3)
    st.voxres("voxres5", c3)
    st.voxres("voxres6", c3)
    st.add("bn7", "batchnorm")
    st.add("relu7", "relu")
    st.add("pool7", "maxpool3d", kernel=2)
    st.conv("conv7", c4)
    st.voxres("voxres8", c4)
    st.voxres("voxres9", c4)
    return st


def build_resnet3d(scale="desk-32"):
    """Six residual blocks with a max-pool + fully-connected head."""
    prof = _profile(scale)
    st = _resnet_trunk(prof)
    feature = st.tail
    st.add("pool10", "maxpool3d", kernel=2)
    st.add("fc11", "fully-connected", units=prof["resnet"]["fc"])
    st.add("relu11", "relu")
    st.add("output", "softmax", units=2)
    dims = prof["dims"]
    return ModelGraph("3D-ResNet", (1, dims, dims, dims), st.layers, feature_layer=feature)


def build_resnet3d_gap(scale="desk-32"):
    """The residual trunk with global average pooling feeding the softmax."""
    prof = _profile(scale)
    st = _resnet_trunk(prof)
    feature = st.tail
    st.add("gap", "global-average-pool")
    st.add("output", "softmax", units=2)
    dims = prof["dims"]
    return ModelGraph("3D-ResNet-GAP", (1, dims, dims, dims), st.layers, feature_layer=feature)


def build_resnet3d_shallow_gap(scale="desk-32"):
    """ResNet-GAP without ``conv4`` .. ``voxres9_out``: a finer CAM grid."""
    prof = _profile(scale)
    st = _resnet_trunk(prof, shallow=True)
    feature = st.tail
    st.add("gap", "global-average-pool")
    st.add("output", "softmax", units=2)
    dims = prof["dims"]
    return ModelGraph("3D-ResNet-Shallow-GAP", (1, dims, dims, dims), st.layers, feature_layer=feature)


ARCHITECTURES = {
    "vgg": build_vgg3d,
    "resnet": build_resnet3d,
    "resnet-gap": build_resnet3d_gap,
    "resnet-shallow-gap": build_resnet3d_shallow_gap,
}


def build(architecture, scale="desk-32"):
    try:
        builder = ARCHITECTURES[architecture]
    except KeyError:
        raise ValueError(f"unknown architecture {architecture!r}; expected one of {sorted(ARCHITECTURES)}") from None
    return builder(scale)
