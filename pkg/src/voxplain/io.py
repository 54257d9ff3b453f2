"""On-disk formats.

Volume file
    ``P.json`` header plus ``P.raw`` blob. The blob holds ``prod(dims)``
    little-endian values with x varying fastest. The header records dims,
    dtype, spacing and kind (``volume``/``heatmap`` as float32, ``mask`` as
    uint8, ``labels`` as uint32), and optionally ``raw_range`` and
    ``source_layer`` for heatmaps.
Hierarchy
    ``P.json`` index plus one labels volume file per level.
Checkpoint
    ``P.json`` manifest (graph, tensor table, training config, seed) plus
    ``P.raw``, all trainable and running tensors as little-endian float32
    concatenated in manifest order.
Dataset manifest
    JSON list of samples pointing at volume and mask files.

All writes go to a temporary file first and are renamed into place.
"""

from dataclasses import asdict, dataclass, fields
import csv
import datetime
import io as _io
import json
import math
import os
import tempfile

import numpy as np

from .exceptions import DataError, ShapeError
from .nn.engine import ParamStore, check_params, param_shapes
from .nn.graph import ModelGraph
from .segmentation import SegmentationHierarchy

__all__ = [
    "KIND_DTYPES",
    "VolumeFile",
    "RunConfig",
    "write_volume",
    "read_volume",
    "read_volume_file",
    "write_hierarchy",
    "read_hierarchy",
    "write_checkpoint",
    "read_checkpoint",
    "write_dataset",
    "read_dataset",
    "write_pr_csv",
    "read_pr_csv",
    "write_json",
    "read_json",
    "load_run_config",
]

KIND_DTYPES = {"volume": "float32", "heatmap": "float32", "mask": "uint8", "labels": "uint32"}
_LE = {"float32": "<f4", "uint8": "u1", "uint32": "<u4"}


def _stem(path):
    path = os.fspath(path)
    for ext in (".json", ".raw"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return path


def _atomic_write(path, data):
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=False)
    _atomic_write(path, (text + "\n").encode("utf-8"))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON ({exc})") from exc


@dataclass(frozen=True)
class VolumeFile:
    """A volume file's array and header."""

    data: np.ndarray
    kind: str
    spacing: tuple = (1.0, 1.0, 1.0)
    raw_range: tuple = None
    source_layer: str = None

    @property
    def dims(self):
        return self.data.shape


def write_volume(path, data, kind="volume", spacing=(1.0, 1.0, 1.0), raw_range=None, source_layer=None):
    """Write a 3D array; returns the header path.

    Float kinds are stored as float32 and must be finite.
    """
    if kind not in KIND_DTYPES:
        raise ValueError(f"kind must be one of {sorted(KIND_DTYPES)}, got {kind!r}")
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise ShapeError(f"volume files hold 3D arrays, got shape {arr.shape}")
    dtype = KIND_DTYPES[kind]
    if dtype == "float32" and not np.isfinite(arr).all():
        raise DataError(f"{kind} contains non-finite values")
    if kind == "mask" and not np.isin(arr, (0, 1)).all():
        raise DataError("mask values must be 0 or 1")
    if kind == "labels" and arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint32).max):
        raise DataError("labels must fit in uint32")
    stem = _stem(path)
    header = {
        "format": "voxplain-volume",
        "version": 1,
        "dims": list(arr.shape),
        "dtype": dtype,
        "byteorder": "little",
        "order": "x-fastest",
        "spacing": [float(s) for s in spacing],
        "kind": kind,
    }
    if raw_range is not None:
        header["raw_range"] = [float(raw_range[0]), float(raw_range[1])]
    if source_layer is not None:
        header["source_layer"] = str(source_layer)
    blob = arr.astype(_LE[dtype]).tobytes(order="F")
    _atomic_write(stem + ".raw", blob)
    write_json(stem + ".json", header)
    return stem + ".json"


def read_volume_file(path):
    stem = _stem(path)
    header = read_json(stem + ".json")
    kind = header.get("kind")
    dtype = header.get("dtype")
    if dtype not in _LE:
        raise DataError(f"{stem}.json: unknown dtype {dtype!r}")
    if kind not in KIND_DTYPES or KIND_DTYPES[kind] != dtype:
        raise DataError(f"{stem}.json: kind {kind!r} cannot be stored as {dtype}")
    dims = tuple(int(d) for d in header.get("dims", ()))
    if len(dims) != 3 or min(dims) < 1:
        raise DataError(f"{stem}.json: bad dims {header.get('dims')}")
    with open(stem + ".raw", "rb") as fh:
        blob = fh.read()
    expected = math.prod(dims) * np.dtype(_LE[dtype]).itemsize
    if len(blob) != expected:
        raise DataError(f"{stem}.raw: length mismatch, expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype=_LE[dtype]).reshape(dims, order="F").astype(dtype)
    if dtype == "float32" and not np.isfinite(data).all():
        raise DataError(f"{stem}.raw: non-finite values in a {kind} file")
    rr = header.get("raw_range")
    return VolumeFile(
        np.ascontiguousarray(data),
        kind,
        tuple(header.get("spacing", (1.0, 1.0, 1.0))),
        None if rr is None else tuple(rr),
        header.get("source_layer"),
    )


def read_volume(path):
    """Array stored in a volume file (float32, uint8 or uint32)."""
    return read_volume_file(path).data


def write_hierarchy(path, hierarchy):
    stem = _stem(path)
    base = os.path.basename(stem)
    entries = []
    for n, (lv, h) in enumerate(zip(hierarchy.levels, hierarchy.cut_heights)):
        name = f"{base}.level{n:02d}"
        write_volume(os.path.join(os.path.dirname(stem), name), lv, kind="labels")
        entries.append({"file": name, "count": int(lv.max()), "cut_height": None if np.isinf(h) else float(h)})
    write_json(stem + ".json", {"format": "voxplain-hierarchy", "version": 1,
                                "dims": list(hierarchy.shape), "levels": entries})
    return stem + ".json"


def read_hierarchy(path):
    stem = _stem(path)
    index = read_json(stem + ".json")
    if index.get("format") != "voxplain-hierarchy":
        raise DataError(f"{stem}.json is not a hierarchy index")
    folder = os.path.dirname(stem)
    levels, cuts = [], []
    for e in index["levels"]:
        lv = read_volume(os.path.join(folder, e["file"])).astype(np.int64)
        if int(lv.max()) != e["count"]:
            raise DataError(f"{e['file']}: {int(lv.max())} segments, index says {e['count']}")
        levels.append(lv)
        cuts.append(-np.inf if e["cut_height"] is None else e["cut_height"])
    return SegmentationHierarchy(tuple(levels), tuple(cuts))


def write_checkpoint(path, graph, params, train_config=None, seed=None, meta=None, created=None):
    """Save a graph and its parameters (cast to float32).

    ``meta`` is a free-form JSON dict stored in the manifest.
    """
    check_params(graph, params)
    stem = _stem(path)
    table, chunks, offset = [], [], 0
    for key in param_shapes(graph):
        arr = np.asarray(params[key], dtype="<f4")
        table.append({"key": key, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    manifest = {
        "format": "voxplain-checkpoint",
        "version": 1,
        "dtype": "float32",
        "byteorder": "little",
        "graph": graph.to_dict(),
        "tensors": table,
        "n_values": offset,
        "seed": seed,
        "train_config": train_config,
        "meta": meta or {},
        "created": created or datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    _atomic_write(stem + ".raw", b"".join(chunks))
    write_json(stem + ".json", manifest)
    return stem + ".json"


def read_checkpoint(path):
    """Returns ``(graph, params, manifest)``; parameters come back as float32."""
    stem = _stem(path)
    manifest = read_json(stem + ".json")
    if manifest.get("format") != "voxplain-checkpoint":
        raise DataError(f"{stem}.json is not a checkpoint manifest")
    graph = ModelGraph.from_dict(manifest["graph"])
    with open(stem + ".raw", "rb") as fh:
        blob = fh.read()
    expected = manifest["n_values"] * 4
    if len(blob) != expected:
        raise DataError(f"{stem}.raw: length mismatch, expected {expected} bytes, got {len(blob)}")
    flat = np.frombuffer(blob, dtype="<f4")
    arrays = {}
    for t in manifest["tensors"]:
        n = math.prod(t["shape"])
        arrays[t["key"]] = flat[t["offset"]:t["offset"] + n].reshape(t["shape"]).astype(np.float32)
    params = ParamStore({k: arrays[k] for k in param_shapes(graph) if k in arrays})
    if len(params) != len(arrays):
        raise DataError(f"{stem}.json: tensor table does not match the graph")
    check_params(graph, params)
    return graph, params, manifest


def write_dataset(folder, dataset, spec=None, created=None):
    """Write every sample's volume (and mask) plus ``dataset.json``."""
    entries = []
    for i, sid in enumerate(dataset.ids):
        write_volume(os.path.join(folder, f"{sid}_vol"), dataset.volumes[i], kind="volume")
        e = {"id": sid, "label": int(dataset.labels[i]), "volume": f"{sid}_vol",
             "set_aside": bool(dataset.set_aside[i])}
        if dataset.masks is not None:
            write_volume(os.path.join(folder, f"{sid}_mask"), dataset.masks[i].astype(np.uint8), kind="mask")
            e["mask"] = f"{sid}_mask"
        entries.append(e)
    manifest = {
        "format": "voxplain-dataset",
        "version": 1,
        "n_samples": len(entries),
        "samples": entries,
        "spec": spec,
        "created": created or datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    path = os.path.join(folder, "dataset.json")
    write_json(path, manifest)
    return path


def read_dataset(path):
    from .benchmark import LabeledDataset

    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, "dataset.json")
    manifest = read_json(path)
    if manifest.get("format") != "voxplain-dataset":
        raise DataError(f"{path} is not a dataset manifest")
    folder = os.path.dirname(path)
    samples = manifest["samples"]
    if not samples:
        raise DataError(f"{path}: no samples")
    vols = np.stack([read_volume(os.path.join(folder, s["volume"])) for s in samples])
    masks = None
    if all("mask" in s for s in samples):
        masks = np.stack([read_volume(os.path.join(folder, s["mask"])).astype(bool) for s in samples])
    return LabeledDataset(
        vols,
        [s["label"] for s in samples],
        masks,
        [s["id"] for s in samples],
        [s.get("set_aside", False) for s in samples],
    )


def write_pr_csv(path, curve):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", "precision", "recall"])
    for t, p, r in curve.rows():
        w.writerow([repr(t), repr(p), repr(r)])
    _atomic_write(path, buf.getvalue().encode("utf-8"))
    return os.fspath(path)


def read_pr_csv(path):
    from .benchmark import PRCurve

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    return PRCurve(col("threshold"), col("precision"), col("recall"))


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by the command-line subcommands.

    Training fields left as None resolve to the architecture's default
    schedule; :meth:`resolved` fills them in.
    """

    data_dir: str = "data"
    output_dir: str = "out"
    checkpoint: str = None
    profile: str = "desk-32"
    architecture: str = "resnet-gap"
    optimizer: str = None
    lr: float = None
    batch_size: int = None
    epochs: int = None
    dtype: str = "float32"
    method: str = "grad-cam"
    target: str = "AD"
    layer: str = "last-conv"
    half_extent: int = 3
    fill: float = 0.0
    stride: int = 1
    n_seeds: int = 300
    n_levels: int = 10
    pr_mode: str = "pooled"
    splits: int = 5
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        from .attribution import METHODS
        from .nn.builders import ARCHITECTURES, PROFILES
        from .nn.graph import CLASSES

        checks = [
            ("profile", PROFILES), ("architecture", ARCHITECTURES), ("method", METHODS),
            ("target", CLASSES), ("pr_mode", ("pooled", "per-scan")), ("dtype", ("float32", "float64")),
        ]
        for key, allowed in checks:
            if getattr(self, key) not in allowed:
                raise DataError(f"config {key}={getattr(self, key)!r}; expected one of {sorted(allowed)}")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def update(self, **overrides):
        vals = asdict(self)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(vals)

    def resolved(self):
        from .nn.train import default_config

        base = default_config(self.architecture)
        fill = {k: getattr(base, k) for k in ("optimizer", "lr", "batch_size", "epochs") if getattr(self, k) is None}
        return self.update(**fill)

    def train_config(self):
        from .nn.train import TrainConfig

        r = self.resolved()
        return TrainConfig(optimizer=r.optimizer, lr=r.lr, batch_size=r.batch_size, epochs=r.epochs,
                           seed=r.seed, dtype=r.dtype)

    def to_dict(self):
        return asdict(self)


def load_run_config(path=None, **overrides):
    """Read a RunConfig JSON (unknown keys rejected) and apply overrides."""
    cfg = RunConfig()
    if path is not None:
        cfg = RunConfig.from_dict(read_json(path))
    return cfg.update(**overrides)
