"""``ddnet`` command-line entry point.

Exit codes: 0 when every check passed, 1 when a check failed, 2 for usage,
configuration or data errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tensor, load_checkpoint, no_grad, save_checkpoint
from .config import RunConfig, load_config
from .data import (SynthParams, generate, load_dataset, load_mask, load_pgm, load_ppm,
                   save_mask, save_pgm, save_ppm, write_dataset)
from .errors import DDNetError
from .metrics import evaluate
from .model import DDNet, ModelConfig
from .polar import (PolarGridSpec, inverse_polar_transform, inverse_polar_transform_labels,
                    polar_transform, polar_transform_labels)

log = logging.getLogger("ddnet")

CHECKPOINT = "model.ddnt"
MODEL_CFG = "model.cfg"
GRAD_TOL = 1e-4


class UsageError(Exception):
    pass


def _pair(text: str, kind=float) -> tuple:
    try:
        a, b = (kind(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from exc
    return a, b


# -- generate ------------------------------------------------------------------------

def cmd_generate(args) -> int:
    samples = generate(SynthParams(size=args.size, seed=args.seed), args.count)
    write_dataset(args.out, samples)
    log.info("wrote %d samples to %s", len(samples), args.out)
    return 0


# -- train ---------------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    iters_a = args.iterations_a
    if iters_a is None and args.iterations is not None:
        # a short run should not be dominated by pretraining
        iters_a = min(base.iterations_a, args.iterations)
    return base.override({
        "iterations_b": args.iterations, "iterations_a": iters_a, "seed": args.seed,
        "lr_stage_a": args.lr_a, "lr_stage_b": args.lr_b, "batch_size": args.batch,
        "augment": False if args.no_augment else None,
        "pretrain": False if args.no_pretrain else None,
    })


def _save_model(model: DDNet, out: Path) -> None:
    save_checkpoint(out / CHECKPOINT, model.state_dict())
    model.cfg.save(out / MODEL_CFG)


def load_model(model_dir) -> DDNet:
    root = Path(model_dir)
    ckpt, cfg = root / CHECKPOINT, root / MODEL_CFG
    for p in (ckpt, cfg):
        if not p.exists():
            raise UsageError(f"missing {p.name} in {root}")
    model = DDNet(ModelConfig.load(cfg))
    model.load_state_dict(load_checkpoint(ckpt))
    return model


def _write_report(report, out: Path, stem: str = "metrics") -> None:
    from .plotting import plot_metrics
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.describe() + "\n")
    plot_metrics(report, out / f"{stem}.png")


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve
    from .train import predict_samples, train_two_stage

    run = _run_config(args)
    log.info("resolved config:\n%s", run.to_text().rstrip())
    if args.data:
        samples = load_dataset(args.data)
    else:
        samples = generate(SynthParams(size=run.size, seed=run.train_seed), run.train_count)
    model_cfg = run.model_config()
    if samples[0].image.shape[-1] != model_cfg.input_size:
        model_cfg = run.override({"size": samples[0].image.shape[-1]}).model_config()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(run.to_text())
    result = train_two_stage(samples, model_cfg, run.train_config(), pretrain=run.pretrain)
    _save_model(result.model, out)

    with open(out / "loss_curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "iteration", "loss"])
        writer.writerows((s, i, f"{l:.17g}") for s, i, l in result.history)
    if result.history:
        plot_loss_curve(result.history, out / "loss_curve.png")

    if args.test:
        test = load_dataset(args.test)
        preds = predict_samples(result.model, test)
        report = evaluate(preds, [s.mask for s in test], [s.true_cdr for s in test],
                          [s.name for s in test])
        _write_report(report, out / "eval")
        masks = out / "eval" / "masks"
        masks.mkdir(exist_ok=True)
        for s, m in zip(test, preds):
            save_mask(masks / f"{s.name}.pgm", m)
        print(report.describe())
    return 0


# -- predict -------------------------------------------------------------------------

def cmd_predict(args) -> int:
    from .plotting import overlay_contours
    from .train import predict_samples

    model = load_model(args.model)
    samples = load_dataset(args.data)
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    preds = predict_samples(model, samples)
    if args.overlay:
        (out / "overlays").mkdir(exist_ok=True)
    for s, m in zip(samples, preds):
        save_mask(out / "masks" / f"{s.name}.pgm", m)
        if args.overlay:
            save_ppm(out / "overlays" / f"{s.name}.ppm", overlay_contours(s.image, m, s.mask))
    log.info("wrote %d predictions to %s", len(preds), out)
    return 0


# -- metrics -------------------------------------------------------------------------

def _mask_dir(path: Path) -> Path:
    return path / "masks" if (path / "masks").is_dir() else path


def _read_cdrs(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"filename", "true_cdr"} <= set(rows[0]):
        raise UsageError(f"{path}: expected columns filename,true_cdr")
    return {r["filename"]: float(r["true_cdr"]) for r in rows}


def cmd_metrics(args) -> int:
    pred_dir, gt_dir = _mask_dir(Path(args.pred)), _mask_dir(Path(args.gt))
    names = sorted(p.stem for p in gt_dir.glob("*.pgm"))
    if not names:
        raise UsageError(f"no ground-truth masks in {gt_dir}")
    preds = []
    for n in names:
        path = pred_dir / f"{n}.pgm"
        if not path.exists():
            raise UsageError(f"no prediction {path}")
        preds.append(load_mask(path))
    gts = [load_mask(gt_dir / f"{n}.pgm") for n in names]
    cdrs = None
    if args.cdr:
        table = _read_cdrs(args.cdr)
        missing = [n for n in names if n not in table]
        if missing:
            raise UsageError(f"{args.cdr}: no CDR for {missing[0]}")
        cdrs = [table[n] for n in names]
    report = evaluate(preds, gts, cdrs, names)
    _write_report(report, Path(args.out))
    print(report.describe())
    return 0


# -- transform -----------------------------------------------------------------------

def _read_any(path: Path, labels: bool) -> tuple[np.ndarray, str]:
    magic = path.read_bytes()[:2]
    if magic == b"P6":
        if labels:
            raise UsageError("--labels needs a P5 mask")
        return load_ppm(path), "ppm"
    if magic == b"P5":
        return (load_mask(path), "mask") if labels else (load_pgm(path) / 255.0, "pgm")
    raise UsageError(f"{path}: not a binary PPM/PGM file")


def cmd_transform(args) -> int:
    src = Path(args.input)
    arr, kind = _read_any(src, args.labels)
    h, w = arr.shape[-2:]
    if args.inverse:
        ch, cw = args.out_size or (h, w)
        spec = PolarGridSpec.default(ch, cw, out_h=h, out_w=w, radial_extent=args.radial_extent,
                                     center=args.center)
    else:
        oh, ow = args.out_size or (h, w)
        spec = PolarGridSpec.default(h, w, out_h=oh, out_w=ow, radial_extent=args.radial_extent,
                                     center=args.center)
    if kind == "mask":
        fn = inverse_polar_transform_labels if args.inverse else polar_transform_labels
        save_mask(args.output, fn(arr, spec))
        return 0
    fn = inverse_polar_transform if args.inverse else polar_transform
    x = arr if kind == "ppm" else arr[None]
    with no_grad():
        y = fn(Tensor(x[None]), spec).data[0]
    if kind == "ppm":
        save_ppm(args.output, y)
    else:
        save_pgm(args.output, np.clip(np.round(y[0] * 255.0), 0, 255))
    return 0


# -- checks --------------------------------------------------------------------------

def cmd_verify_equivariance(args) -> int:
    from .equivariance import run_suite

    reports = run_suite(range(args.seed, args.seed + args.seeds), size=args.size,
                        rotation_size=args.rotation_size)
    worst: dict[tuple[str, int], object] = {}
    for r in reports:
        key = (r.prop, r.stage)
        if key not in worst or r.max_error > worst[key].max_error:
            worst[key] = r
    for key in sorted(worst):
        print(worst[key].line())
    failed = [r for r in reports if not r.passed]
    if args.out:
        from .plotting import plot_equivariance
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "equivariance.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["prop", "stage", "max_error", "mean_error", "tolerance", "passed"])
            writer.writerows((r.prop, r.stage, f"{r.max_error:.6e}", f"{r.mean_error:.6e}",
                              f"{r.tolerance:.0e}", int(r.passed)) for r in reports)
        plot_equivariance(reports, out / "equivariance.png")
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return 1 if failed else 0


def cmd_grad_check(args) -> int:
    from .gradsuite import run_model_check, run_op_checks

    worst: dict[str, float] = {}
    for seed in range(args.seed, args.seed + args.seeds):
        results = run_op_checks(seed)
        if not args.ops_only:
            results += run_model_check(seed)
        for name, err in results:
            worst[name] = max(worst.get(name, 0.0), err)
    bad = 0
    for name, err in worst.items():
        ok = err < GRAD_TOL
        bad += not ok
        print(f"{name:<48} {err:.3e}  {'PASS' if ok else 'FAIL'}")
    print(f"{len(worst) - bad}/{len(worst)} gradient checks passed (tol {GRAD_TOL:.0e})")
    return 1 if bad else 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddnet", description="Dual-domain optic disc/cup toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic fundus dataset")
    g.add_argument("--count", type=int, default=200)
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="two-stage training")
    t.add_argument("--data", help="training dataset (default: generate from config)")
    t.add_argument("--test", help="dataset to evaluate after training")
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="key=value run config")
    t.add_argument("--iterations", type=int, help="stage B iterations")
    t.add_argument("--iterations-a", type=int, help="stage A iterations per branch")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr-a", type=float)
    t.add_argument("--lr-b", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--no-pretrain", action="store_true")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="segment a dataset with a trained model")
    pr.add_argument("--model", required=True, help="directory holding model.ddnt and model.cfg")
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--overlay", action="store_true", help="also write contour overlays")
    pr.set_defaults(func=cmd_predict)

    m = sub.add_parser("metrics", help="score predicted masks against a dataset")
    m.add_argument("--pred", required=True)
    m.add_argument("--gt", required=True)
    m.add_argument("--cdr", help="CSV with filename,true_cdr (default: CDR of the gt masks)")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_metrics)

    tr = sub.add_parser("transform", help="polar or inverse polar resampling of one file")
    tr.add_argument("--input", required=True)
    tr.add_argument("--output", required=True)
    tr.add_argument("--inverse", action="store_true")
    tr.add_argument("--labels", action="store_true", help="nearest-neighbour label transform")
    tr.add_argument("--center", type=_pair, help="row,col")
    tr.add_argument("--radial-extent", type=float)
    tr.add_argument("--out-size", type=lambda s: _pair(s, int), help="rows,cols")
    tr.set_defaults(func=cmd_transform)

    e = sub.add_parser("verify-equivariance", help="numerical equivariance suite")
    e.add_argument("--seeds", type=int, default=20)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--size", type=int, default=64)
    e.add_argument("--rotation-size", type=int, default=128)
    e.add_argument("--out", help="directory for CSV and figure")
    e.set_defaults(func=cmd_verify_equivariance)

    gc = sub.add_parser("grad-check", help="finite-difference gradient suite")
    gc.add_argument("--seeds", type=int, default=10)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--ops-only", action="store_true")
    gc.set_defaults(func=cmd_grad_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ddnet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DDNetError, FileNotFoundError) as exc:
        print(f"ddnet {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
