"""Command-line entry point.

Exit codes: 0 success, 2 configuration or I/O problem, 3 shape mismatch,
4 numeric divergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bundle, config, dist_metrics, pipeline
from .config import ConfigError, RunConfig
from .jacobi import ConvergenceError
from .mpca import fit_joint, project, reconstruct
from .neural_net import (DivergenceError, TrainConfig, build_type, finetune, normalize_positions,
                         predict_position, train)
from .pipeline import SplitSpec, StageError, derive_seed, split
from .signal_lab import build_domain
from .tensor_core import ShapeError, Tensor3

EXIT_OK, EXIT_CONFIG, EXIT_SHAPE, EXIT_DIVERGENCE = 0, 2, 3, 4


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _load_config(args) -> RunConfig:
    cfg = config.load(args.config)
    return cfg.with_overrides(seed=args.seed, q=getattr(args, "q", None), copies=getattr(args, "copies", None),
                              out=getattr(args, "out", None), paper_split=getattr(args, "paper_split", False))


def _domain(cfg: RunConfig, which: str):
    dom = cfg.domain(which)
    if dom.bundle:
        path = Path(dom.bundle)
        if not path.exists():
            raise ConfigError(f"{which}.bundle: no dataset bundle at {path}")
        return bundle.load_dataset(path)
    return build_domain(dom.scenario, dom.network, cfg.experiment.copies, cfg.snr_range)


def _summary(ds) -> str:
    rows, cols = ds.image_dims
    return (f"{len(ds)} images of {rows}x{cols}, {len(ds.site_ids)} damage sites, "
            f"network {ds.network}, material {ds.material}, stage {ds.stage}")


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    ds = _domain(cfg, args.domain)
    out = Path(args.out or Path(cfg.out) / args.domain)
    bundle.save_dataset(ds, out)
    print(f"wrote {out}: {_summary(ds)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    source, target = _domain(cfg, "source"), _domain(cfg, "target")
    report = pipeline.run_procedure(source, target, cfg.experiment)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.txt").write_text(report.to_text())
    (out / "predictions.csv").write_text(report.predictions_csv())
    (out / "stage_log.txt").write_text(report.stage_log_text())
    print(report.to_text(), end="")
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    a, b = bundle.load_dataset(args.source), bundle.load_dataset(args.target)
    rep = dist_metrics.compute_all(a.images, b.images, args.bins)
    names = dist_metrics.MetricsReport.names()
    _write_csv(Path(args.out), names, [[_fmt(rep.as_dict()[n]) for n in names]])
    for n in names:
        print(f"{n:14} {rep.as_dict()[n]:.6g}")
    return EXIT_OK


def cmd_mpca(args) -> int:
    a, b = bundle.load_dataset(args.source), bundle.load_dataset(args.target)
    joint = fit_joint(a.tensor(), b.tensor(), args.q)
    out = Path(args.out)
    bundle.save_basis(joint.basis, out / "basis")
    bundle.save_dataset(a.with_images(joint.projected_source.data, "projected"), out / "source")
    bundle.save_dataset(b.with_images(joint.projected_target.data, "projected"), out / "target")
    print(f"Q = {args.q:g}%: columns {joint.basis.i2} -> {joint.p2}, "
          f"retained {joint.basis.retained_fraction:.6f}, fingerprint {joint.basis.fingerprint()}")
    return EXIT_OK


def _train_config(args, section: str) -> tuple[TrainConfig, RunConfig | None]:
    if args.config:
        cfg = _load_config(args)
        return getattr(cfg.experiment, section), cfg
    return TrainConfig(), None


def _axis_sets(ds, axis: str):
    col = {"x": 0, "y": 1}[axis]
    return ds.images, normalize_positions(ds.labels)[:, col]


def cmd_train(args) -> int:
    ds = bundle.load_dataset(args.bundle)
    tcfg, cfg = _train_config(args, "train" if ds.stage == "raw" else "mpca_train")
    seed = args.seed if args.seed is not None else (cfg.experiment.seed if cfg else 0)
    fractions = cfg.experiment.source_split if cfg else (0.7, 0.15, 0.15)
    tr, va, _ = split(ds, SplitSpec(fractions, derive_seed(seed, "split.source"), not args.paper_split))
    kind = args.type or (1 if ds.stage == "raw" else 2 if ds.network == "circular" else 3)
    spec = build_type(kind, ds.image_dims)
    model = train(spec, _axis_sets(tr, args.axis), _axis_sets(va, args.axis),
                  replace(tcfg, seed=derive_seed(seed, f"train.{args.axis}")))
    bundle.save_model(model, args.out, {"axis": args.axis, "type": kind, "stage": ds.stage})
    print(f"type-{kind} {args.axis} model: {len(model.history)} epochs, "
          f"best val loss {min(h['val_loss'] for h in model.history):.6g}" if model.history else "no epochs run")
    return EXIT_OK


def cmd_finetune(args) -> int:
    ds = bundle.load_dataset(args.bundle)
    model = bundle.load_model(args.model)
    meta = bundle.read_model_meta(args.model)
    axis = args.axis or meta.get("axis")
    if axis not in ("x", "y"):
        raise ConfigError("axis: pass --axis x|y (checkpoint does not record one)")
    tcfg, cfg = _train_config(args, "finetune")
    seed = args.seed if args.seed is not None else (cfg.experiment.seed if cfg else 0)
    fractions = cfg.experiment.target_split if cfg else (0.9, 0.05, 0.05)
    tr, va, _ = split(ds, SplitSpec(fractions, derive_seed(seed, "split.target"), not args.paper_split))
    ft = finetune(model, _axis_sets(tr, axis), _axis_sets(va, axis),
                  replace(tcfg, seed=derive_seed(seed, f"finetune.{axis}")))
    bundle.save_model(ft, args.out, dict(meta, axis=axis, finetuned=True))
    print(f"fine-tuned {axis} model: {len(ft.history)} epochs")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = bundle.load_dataset(args.bundle)
    basis = bundle.load_basis(args.basis) if args.basis else None
    out = Path(args.out)
    if args.model_x is None and args.model_y is None:
        if basis is None:
            raise ConfigError("eval needs --model-x/--model-y, --basis, or both")
        t = ds.tensor()
        err = float(np.max(np.abs(reconstruct(project(t, basis), basis).data - t.data)))
        _write_csv(out, ("p2", "i2", "max_abs_reconstruction_error"), [(basis.p2, basis.i2, _fmt(err))])
        print(f"reconstruction through {basis.p2} of {basis.i2} columns: max abs error {err:.3e}")
        return EXIT_OK
    if args.model_x is None or args.model_y is None:
        raise ConfigError("eval needs both --model-x and --model-y")
    images = project(Tensor3(ds.images), basis).data if basis else ds.images
    preds = predict_position(bundle.load_model(args.model_x), bundle.load_model(args.model_y), images)
    rx, ry = pipeline.rmse(preds, ds.labels)
    _write_csv(out, ("n", "rmse_x_mm", "rmse_y_mm"), [(len(ds), _fmt(rx), _fmt(ry))])
    if args.predictions:
        _write_csv(Path(args.predictions), ("index", "site", "x_true", "y_true", "x_pred", "y_pred"),
                   [(i, g, _fmt(t[0]), _fmt(t[1]), _fmt(p[0]), _fmt(p[1]))
                    for i, (g, t, p) in enumerate(zip(ds.groups, ds.labels, preds))])
    print(f"RMSE over {len(ds)} images: x {rx:.4f} mm, y {ry:.4f} mm")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpca-tl", description="MPCA-based domain adaptation for guided-wave "
                                "damage localisation with CNN regression.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_config=True, config_required=True):
        if with_config:
            sp.add_argument("--config", required=config_required, help="key=value run configuration")
        sp.add_argument("--seed", type=int, help="override the master seed")

    s = sub.add_parser("synth", help="simulate one domain and write a dataset bundle")
    common(s)
    s.add_argument("--domain", choices=("source", "target"), default="source")
    s.add_argument("--copies", type=int, help="augmented copies per damage site")
    s.add_argument("--out", help="bundle directory (default <out>/<domain>)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="run the full adaptation study")
    common(s)
    s.add_argument("--q", type=float, help="MPCA retained-variance percentage")
    s.add_argument("--copies", type=int)
    s.add_argument("--out", help="report directory")
    s.add_argument("--paper-split", action="store_true", help="split images rather than damage sites")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("metrics", help="histogram distances between two bundles")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--bins", type=int, default=dist_metrics.DEFAULT_BINS)
    s.add_argument("--out", required=True, help="CSV file")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("mpca", help="fit a joint mode-2 basis and project both bundles")
    s.add_argument("source")
    s.add_argument("target")
    s.add_argument("--q", type=float, default=99.0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_mpca)

    s = sub.add_parser("train", help="train one coordinate network on a bundle")
    common(s, config_required=False)
    s.add_argument("--bundle", required=True)
    s.add_argument("--axis", choices=("x", "y"), required=True)
    s.add_argument("--type", type=int, choices=(1, 2, 3))
    s.add_argument("--paper-split", action="store_true")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", help="retrain the head of a checkpoint on another bundle")
    common(s, config_required=False)
    s.add_argument("--model", required=True)
    s.add_argument("--bundle", required=True)
    s.add_argument("--axis", choices=("x", "y"))
    s.add_argument("--paper-split", action="store_true")
    s.add_argument("--out", required=True, help="checkpoint directory")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("eval", help="RMSE of a model pair, or reconstruction error of a basis")
    s.add_argument("bundle")
    s.add_argument("--model-x")
    s.add_argument("--model-y")
    s.add_argument("--basis", help="basis directory from the mpca command")
    s.add_argument("--predictions", help="optional per-sample CSV")
    s.add_argument("--out", required=True, help="CSV file")
    s.set_defaults(func=cmd_eval)
    return p


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code(exc.cause)
    if isinstance(exc, ShapeError):
        return EXIT_SHAPE
    if isinstance(exc, (DivergenceError, ConvergenceError, FloatingPointError)):
        return EXIT_DIVERGENCE
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError, KeyError, ArithmeticError, StageError) as exc:
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
