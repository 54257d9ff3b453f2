"""Layer specifications and the model DAG with shape propagation."""

from dataclasses import dataclass, field
import math

from ..exceptions import ArchitectureError, ShapeError

KINDS = (
    "input",
    "conv3d",
    "maxpool3d",
    "batchnorm",
    "relu",
    "residual-add",
    "fully-connected",
    "global-average-pool",
    "dropout",
    "softmax",
)

CLASSES = ("NC", "AD")


def class_index(target):
    """Map a class name (``"AD"``/``"NC"``) or index to its output column."""
    if isinstance(target, str):
        try:
            return CLASSES.index(target.upper())
        except ValueError:
            raise ValueError(f"unknown class {target!r}; expected one of {CLASSES}") from None
    idx = int(target)
    if idx not in (0, 1):
        raise ValueError(f"class index must be 0 (NC) or 1 (AD), got {target}")
    return idx


@dataclass(frozen=True)
class LayerSpec:
    """One node of a model graph.

    ``kind``-specific fields: ``channels`` (conv3d output channels),
    ``kernel`` and ``padding`` (conv3d; pooling uses ``kernel`` as both
    window and stride), ``ceil_mode`` (maxpool3d), ``units`` (fully
    connected width, or class count for the softmax output layer) and
    ``rate`` (dropout). The softmax layer is the output layer: it owns the
    class weights and biases and applies the softmax.
    """

    name: str
    kind: str
    inputs: tuple = ()
    channels: int = None
    kernel: int = 3
    padding: int = 0
    stride: int = 1
    ceil_mode: bool = True
    units: int = None
    rate: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArchitectureError(f"{self.name}: unknown layer kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind == "conv3d":
            if not self.channels or self.channels < 1:
                raise ArchitectureError(f"{self.name}: conv3d needs channels >= 1")
            if self.kernel < 1 or self.padding < 0:
                raise ArchitectureError(f"{self.name}: invalid kernel/padding")
            if self.stride != 1:
                raise ArchitectureError(f"{self.name}: only stride-1 convolutions are supported")
        if self.kind == "maxpool3d" and self.kernel < 1:
            raise ArchitectureError(f"{self.name}: pool kernel must be positive")
        if self.kind in ("fully-connected", "softmax") and (not self.units or self.units < 1):
            raise ArchitectureError(f"{self.name}: {self.kind} needs units >= 1")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ArchitectureError(f"{self.name}: dropout rate must lie in [0, 1)")
        n_in = {"input": 0, "residual-add": 2}.get(self.kind, 1)
        if len(self.inputs) != n_in:
            raise ArchitectureError(f"{self.name}: {self.kind} takes {n_in} input(s), got {len(self.inputs)}")

    def to_dict(self):
        d = {"name": self.name, "kind": self.kind, "inputs": list(self.inputs)}
        if self.kind == "conv3d":
            d.update(channels=self.channels, kernel=self.kernel, padding=self.padding, stride=self.stride)
        elif self.kind == "maxpool3d":
            d.update(kernel=self.kernel, ceil_mode=self.ceil_mode)
        elif self.kind in ("fully-connected", "softmax"):
            d.update(units=self.units)
        elif self.kind == "dropout":
            d.update(rate=self.rate)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["inputs"] = tuple(d.get("inputs", ()))
        return cls(**d)


def _pool_extent(n, k, ceil_mode):
    return math.ceil(n / k) if ceil_mode else n // k


def _propagate(spec, in_shapes):
    """Output shape (without batch axis) of one layer."""
    kind = spec.kind
    if kind in ("relu", "dropout", "batchnorm"):
        return in_shapes[0]
    if kind == "residual-add":
        a, b = in_shapes
        if a != b:
            raise ShapeError(f"{spec.name}: residual-add joins shapes {a} and {b}")
        return a
    if kind == "conv3d":
        shp = in_shapes[0]
        if len(shp) != 4:
            raise ShapeError(f"{spec.name}: conv3d needs a (C, D, H, W) input, got {shp}")
        spatial = tuple(n + 2 * spec.padding - spec.kernel + 1 for n in shp[1:])
        if min(spatial) < 1:
            raise ShapeError(f"{spec.name}: convolution collapses grid {shp[1:]}")
        return (spec.channels,) + spatial
    if kind == "maxpool3d":
        shp = in_shapes[0]
        if len(shp) != 4:
            raise ShapeError(f"{spec.name}: maxpool3d needs a (C, D, H, W) input, got {shp}")
        spatial = tuple(_pool_extent(n, spec.kernel, spec.ceil_mode) for n in shp[1:])
        if min(spatial) < 1:
            raise ShapeError(f"{spec.name}: pooling collapses grid {shp[1:]}")
        return (shp[0],) + spatial
    if kind == "global-average-pool":
        shp = in_shapes[0]
        if len(shp) != 4:
            raise ShapeError(f"{spec.name}: global average pooling needs a spatial input")
        return (shp[0],)
    if kind in ("fully-connected", "softmax"):
        return (spec.units,)
    raise ShapeError(f"{spec.name}: cannot propagate through {kind}")


@dataclass(frozen=True)
class ModelGraph:
    """Ordered DAG of layers from one input node to a softmax output.

    Parameters
    ----------
    name : str
        Architecture label, e.g. ``"3D-ResNet-GAP"``.
    input_shape : tuple
        ``(channels, D, H, W)`` of one sample.
    layers : tuple of LayerSpec
        Topologically ordered; the first is the input node and the last
        is the softmax output layer.
    feature_layer : str
        The last convolutional feature map (what ``"last-conv"`` refers to).
    """

    name: str
    input_shape: tuple
    layers: tuple
    feature_layer: str = None
    n_classes: int = 2
    shapes: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers or self.layers[0].kind != "input":
            raise ArchitectureError("the first layer must be the input node")
        shapes = {}
        for spec in self.layers:
            if spec.name in shapes:
                raise ArchitectureError(f"duplicate layer name {spec.name!r}")
            for src in spec.inputs:
                if src not in shapes:
                    # also rejects cycles: inputs must precede their consumers
                    raise ArchitectureError(f"{spec.name}: input {src!r} is not an earlier layer")
            if spec.kind == "input":
                shapes[spec.name] = self.input_shape
            else:
                shapes[spec.name] = _propagate(spec, [shapes[s] for s in spec.inputs])
        out = self.layers[-1]
        if out.kind != "softmax" or out.units != self.n_classes:
            raise ArchitectureError(f"the output layer must be a {self.n_classes}-way softmax")
        if sum(1 for s in self.layers if s.kind == "input") != 1:
            raise ArchitectureError("exactly one input node is required")
        object.__setattr__(self, "shapes", shapes)
        if self.feature_layer is not None and self.feature_layer not in shapes:
            raise ArchitectureError(f"feature layer {self.feature_layer!r} is not in the graph")

    def __getitem__(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def __contains__(self, name):
        return name in self.shapes

    @property
    def names(self):
        return [s.name for s in self.layers]

    @property
    def output(self):
        return self.layers[-1]

    def consumers(self, name):
        return [s.name for s in self.layers if name in s.inputs]

    def ancestors(self, name):
        """Names of every layer the given layer depends on (inclusive)."""
        seen = {name}
        stack = [name]
        while stack:
            for src in self[stack.pop()].inputs:
                if src not in seen:
                    seen.add(src)
                    stack.append(src)
        return seen

    def on_output_path(self, name):
        return name in self.ancestors(self.output.name)

    def head_kinds(self):
        """Kinds of the layers after the feature layer, in order."""
        names = self.names
        start = names.index(self.feature_layer) + 1 if self.feature_layer else len(names) - 1
        return [s.kind for s in self.layers[start:]]

    def is_gap(self):
        return self.head_kinds() == ["global-average-pool", "softmax"]

    def spatial_shape(self, name):
        shp = self.shapes[name]
        if len(shp) != 4:
            raise ShapeError(f"layer {name!r} has no spatial grid (shape {shp})")
        return shp[1:]

    def resolve_layer(self, name):
        """Resolve the ``"last-conv"`` alias to the feature layer name."""
        if name in (None, "last-conv", "last_conv"):
            if self.feature_layer is None:
                raise ArchitectureError(f"{self.name} declares no feature layer")
            return self.feature_layer
        if name not in self.shapes:
            raise KeyError(f"no layer named {name!r} in {self.name}")
        return name

    def to_dict(self):
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "feature_layer": self.feature_layer,
            "n_classes": self.n_classes,
            "layers": [s.to_dict() for s in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            input_shape=tuple(d["input_shape"]),
            layers=tuple(LayerSpec.from_dict(x) for x in d["layers"]),
            feature_layer=d.get("feature_layer"),
            n_classes=d.get("n_classes", 2),
        )
