"""Command-line interface.

Every subcommand prints a one-line JSON summary on stdout. Exit status is
0 on success, 1 on a usage error and 2 on a data error; messages go to
stderr.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import attribution, benchmark, io, phantom, slices
from .exceptions import VoxplainError
from .nn.builders import ARCHITECTURES, PROFILES, build
from .nn.engine import ParamStore
from .nn.graph import CLASSES
from .nn.train import predict_proba, train
from .segmentation import segment

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(p, *groups):
    """Flags that override RunConfig keys (default None = keep config value)."""
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--output-dir", help="directory for artifacts")
    p.add_argument("--seed", type=int)
    if "data" in groups:
        p.add_argument("--data-dir", help="dataset folder holding dataset.json")
    if "model" in groups:
        p.add_argument("--profile", choices=sorted(PROFILES))
        p.add_argument("--architecture", choices=sorted(ARCHITECTURES))
        p.add_argument("--optimizer", choices=("adam", "nesterov-sgd"))
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--dtype", choices=("float32", "float64"))
    if "checkpoint" in groups:
        p.add_argument("--checkpoint", help="checkpoint manifest (.json)")


CONFIG_KEYS = set(io.RunConfig.keys())


def _run_config(args, **extra):
    flags = {k: v for k, v in vars(args).items() if k in CONFIG_KEYS}
    flags.update(extra)
    return io.load_run_config(args.config, **flags).resolved()


def _out(cfg, name):
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def build_parser():
    parser = _Parser(prog="voxplain", description="Explainable 3D CNN toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("phantom-gen", help="generate a synthetic two-class dataset")
    _add_config_flags(p)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--dims", type=int, nargs=3, default=[32, 32, 32])
    p.add_argument("--delta", type=float, default=2.0, help="lesion intensity offset for class AD")
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--correlation", type=int, default=3)
    p.add_argument("--shape", choices=phantom.SHAPES, default="cuboid")
    p.add_argument("--center", type=int, nargs=3)
    p.add_argument("--extent", type=int, nargs=3, default=[10, 10, 10])
    p.add_argument("--set-aside", type=int, nargs=2, metavar=("N_AD", "N_NC"), default=[0, 0])

    p = sub.add_parser("train", help="train a model on the non-set-aside samples")
    _add_config_flags(p, "data", "model", "checkpoint")

    p = sub.add_parser("predict", help="class probabilities for volumes")
    _add_config_flags(p, "data", "checkpoint")
    p.add_argument("--volume", nargs="+", help="volume files; default: every sample of --data-dir")

    p = sub.add_parser("segment", help="segmentation hierarchy of a volume")
    _add_config_flags(p)
    p.add_argument("--volume", required=True)
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--n-levels", type=int)
    p.add_argument("--name", default="hierarchy")

    p = sub.add_parser("explain", help="attribution heatmap for a volume")
    _add_config_flags(p, "checkpoint")
    p.add_argument("--volume", required=True)
    p.add_argument("--method", choices=attribution.METHODS)
    p.add_argument("--class", dest="target", choices=CLASSES)
    p.add_argument("--layer")
    p.add_argument("--half-extent", type=int)
    p.add_argument("--fill", type=float)
    p.add_argument("--stride", type=int)
    p.add_argument("--hierarchy", help="hierarchy index; computed from the volume when omitted")
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--n-levels", type=int)
    p.add_argument("--name", default="heatmap")

    p = sub.add_parser("benchmark", help="localization curves or cross-validation")
    bsub = p.add_subparsers(dest="mode", parser_class=_Parser)
    pr = bsub.add_parser("pr", help="precision-recall of heatmaps against masks")
    _add_config_flags(pr)
    pr.add_argument("--heatmap", nargs="+", required=True)
    pr.add_argument("--mask", nargs="+", required=True)
    pr.add_argument("--pr-mode", choices=("pooled", "per-scan"))
    pr.add_argument("--name", default="pr")
    cv = bsub.add_parser("cv", help="repeated stratified cross-validation")
    _add_config_flags(cv, "data", "model")
    cv.add_argument("--splits", type=int)
    cv.add_argument("--folds", type=int)

    p = sub.add_parser("export-slices", help="PGM slices of a heatmap over its volume")
    _add_config_flags(p)
    p.add_argument("--heatmap", required=True)
    p.add_argument("--volume")
    p.add_argument("--views", nargs="+", choices=sorted(slices.VIEWS), default=sorted(slices.VIEWS))
    p.add_argument("--index", type=int)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--name", default="slice")
    return parser


def cmd_phantom_gen(args):
    cfg = _run_config(args)
    spec = phantom.PhantomSpec(
        dims=tuple(args.dims), amplitude=args.amplitude, correlation=args.correlation, shape=args.shape,
        center=None if args.center is None else tuple(args.center), extent=tuple(args.extent),
        delta=args.delta, seed=cfg.seed,
    )
    ds = phantom.generate(spec, args.n_per_class)
    if any(args.set_aside):
        ds = ds.with_set_aside(*args.set_aside, seed=cfg.seed)
    manifest = io.write_dataset(cfg.output_dir, ds, spec=spec.to_dict())
    return {"manifest": manifest, "n_samples": len(ds), "lesion_fraction": spec.lesion_fraction,
            "n_set_aside": int(ds.set_aside.sum())}


def _load_model(cfg):
    if not cfg.checkpoint:
        raise UsageError("a checkpoint is required (--checkpoint or config key 'checkpoint')")
    graph, params, _ = io.read_checkpoint(cfg.checkpoint)
    return graph, ParamStore({k: v.astype(np.float64) for k, v in params.items()})


def cmd_train(args):
    cfg = _run_config(args)
    ds = io.read_dataset(cfg.data_dir)
    graph = build(cfg.architecture, cfg.profile)
    tc = cfg.train_config()
    pool = ds.pool
    params, history = train(graph, ds.volumes[pool], ds.labels[pool], tc)
    ckpt = cfg.checkpoint or _out(cfg, "model.json")
    meta = {"architecture": cfg.architecture, "profile": cfg.profile}
    io.write_checkpoint(ckpt, graph, params, tc.to_dict(), cfg.seed, meta)
    resolved = _out(cfg, "resolved_config.json")
    io.write_json(resolved, cfg.update(checkpoint=ckpt).to_dict())
    return {"checkpoint": ckpt, "model": graph.name, "n_train": len(pool),
            "final_loss": history[-1] if history else None, "resolved_config": resolved,
            "config": cfg.update(checkpoint=ckpt).to_dict()}


def cmd_predict(args):
    cfg = _run_config(args)
    graph, params = _load_model(cfg)
    if args.volume:
        ids = list(args.volume)
        X = np.stack([io.read_volume(v) for v in args.volume])
    else:
        ds = io.read_dataset(cfg.data_dir)
        ids, X = ds.ids, ds.volumes
    probs = predict_proba(graph, params, X)
    out = _out(cfg, "predictions.json")
    rows = [{"id": i, "p_nc": float(p[0]), "p_ad": float(p[1]), "class": CLASSES[int(p[1] > 0.5)]}
            for i, p in zip(ids, probs)]
    io.write_json(out, {"model": graph.name, "predictions": rows})
    return {"predictions": out, "n": len(rows), "n_ad": sum(r["class"] == "AD" for r in rows)}


def cmd_segment(args):
    cfg = _run_config(args, n_seeds=args.n_seeds, n_levels=args.n_levels)
    v = io.read_volume(args.volume)
    h = segment(v, cfg.n_seeds, cfg.n_levels, cfg.seed)
    index = io.write_hierarchy(_out(cfg, args.name), h)
    return {"hierarchy": index, "n_levels": h.n_levels, "counts": h.counts}


def cmd_explain(args):
    cfg = _run_config(args, method=args.method, target=args.target, layer=args.layer, half_extent=args.half_extent,
                      fill=args.fill, stride=args.stride, n_seeds=args.n_seeds, n_levels=args.n_levels)
    graph, params = _load_model(cfg)
    v = io.read_volume(args.volume).astype(np.float64)
    hierarchy = None
    if cfg.method == "sa-hier":
        hierarchy = io.read_hierarchy(args.hierarchy) if args.hierarchy else segment(v, cfg.n_seeds, cfg.n_levels, cfg.seed)
    req = attribution.AttributionRequest(cfg.method, cfg.target, cfg.half_extent, cfg.fill, cfg.stride,
                                         cfg.layer, hierarchy)
    counter = attribution.PassCounter()
    heat, coarse = attribution.explain(graph, params, v, req, counter=counter)
    path = io.write_volume(_out(cfg, args.name), heat, kind="heatmap",
                           raw_range=(float(heat.min()), float(heat.max())))
    summary = {"heatmap": path, "method": cfg.method, "class": cfg.target,
               "max_voxel": [int(i) for i in np.unravel_index(np.argmax(heat), heat.shape)],
               "max_score": float(heat.max())}
    if cfg.method in ("baseline", "sa-hier"):
        summary["forward_passes"] = counter.count
    if coarse is not None:
        layer = graph.resolve_layer(cfg.layer) if cfg.method == "grad-cam" else graph.feature_layer
        summary["coarse"] = io.write_volume(_out(cfg, args.name + "_coarse"), coarse, kind="heatmap",
                                            raw_range=(float(coarse.min()), float(coarse.max())), source_layer=layer)
        summary["coarse_dims"] = list(coarse.shape)
    return summary


def cmd_benchmark(args):
    if args.mode == "pr":
        cfg = _run_config(args, pr_mode=args.pr_mode)
        if len(args.heatmap) != len(args.mask):
            raise UsageError("give one --mask per --heatmap")
        hs = [io.read_volume(h) for h in args.heatmap]
        ms = [io.read_volume(m) for m in args.mask]
        curves, auc = benchmark.pr_evaluate(hs, ms, cfg.pr_mode)
        paths = []
        for i, c in enumerate(curves):
            suffix = "" if len(curves) == 1 else f"_{i:03d}"
            paths.append(io.write_pr_csv(_out(cfg, f"{args.name}{suffix}.csv"), c))
        return {"csv": paths[0] if len(paths) == 1 else paths, "pr_auc": auc, "mode": cfg.pr_mode,
                "positive_fraction": float(np.mean(np.concatenate([np.ravel(m) for m in ms])))}
    if args.mode == "cv":
        cfg = _run_config(args, splits=args.splits, folds=args.folds)
        ds = io.read_dataset(cfg.data_dir)
        report = benchmark.cross_validate(ds, lambda: build(cfg.architecture, cfg.profile), cfg.train_config(),
                                          cfg.splits, cfg.folds, cfg.seed)
        js = _out(cfg, "cv_report.json")
        io.write_json(js, report.to_dict())
        txt = _out(cfg, "cv_table.txt")
        io._atomic_write(txt, (benchmark.format_table([report]) + "\n").encode("utf-8"))
        io.write_json(_out(cfg, "resolved_config.json"), cfg.to_dict())
        (am, asd), (cm, csd) = report.auc, report.acc
        return {"report": js, "table": txt, "rounds": len(report.rounds), "auc_mean": am, "auc_std": asd,
                "acc_mean": cm, "acc_std": csd, "row": report.row()}
    raise UsageError("benchmark needs a mode: pr or cv")


def cmd_export_slices(args):
    cfg = _run_config(args)
    h = io.read_volume(args.heatmap)
    v = io.read_volume(args.volume) if args.volume else None
    paths = slices.export_slices(h, v, _out(cfg, args.name), args.views, args.index, args.alpha)
    return {"images": paths, "index": args.index if args.index is not None else
            {k: h.shape[slices.VIEWS[k]] // 2 for k in args.views}}


COMMANDS = {
    "phantom-gen": cmd_phantom_gen,
    "train": cmd_train,
    "predict": cmd_predict,
    "segment": cmd_segment,
    "explain": cmd_explain,
    "benchmark": cmd_benchmark,
    "export-slices": cmd_export_slices,
}


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("choose a subcommand; see --help")
        summary = COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (UsageError, ValueError) as exc:
        if isinstance(exc, VoxplainError):
            print(f"error: {exc}", file=stderr)
            return EXIT_DATA
        print(f"usage error: {exc}", file=stderr)
        return EXIT_USAGE
    except (VoxplainError, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_DATA
    print(json.dumps({"command": args.command, **summary}, sort_keys=True, default=io._json_default), file=stdout)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
