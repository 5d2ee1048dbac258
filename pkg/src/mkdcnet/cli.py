"""Command-line entry point.

Subcommands: synth, train, eval, infer, gradcheck, bench, ablate. Errors
exit nonzero with one machine-parseable line on stderr:

    error kind=<ExceptionName> msg="<message>"

Set MKDC_THREADS before launch to cap BLAS worker threads.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import checks, data as data_mod, svgplot
from .checkpoint import load_model_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .data import (AugmentConfig, Sample, load_corpus, read_manifest, resize_sample,
                   save_corpus, split, split_counts, synth_dataset, write_manifest)
from .metrics import fps_bench
from .model import ABLATION_VARIANTS, build_model
from .netpbm import NetpbmError, load_netpbm, save_netpbm
from .optim import NonFiniteGradient
from .tensor import ShapeError, Tensor, save_tensor
from .train import TrainingDiverged, evaluate, run_training

EXPECTED_ERRORS = (ConfigError, ShapeError, NetpbmError, TrainingDiverged,
                   NonFiniteGradient, FileNotFoundError, NotADirectoryError,
                   ValueError, OSError)


def _fail(exc: BaseException) -> int:
    msg = str(exc).replace('"', "'").replace("\n", " ")
    print(f'error kind={type(exc).__name__} msg="{msg}"', file=sys.stderr)
    return 1


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if getattr(args, "data", None):
        overrides.append(f"data.root={args.data}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _prepare_splits(cfg: RunConfig, data_root: Path, need_valid: bool = True):
    corpus = load_corpus(data_root)
    corpus = [resize_sample(s, cfg.data.img_size)
              if s.image.shape[2:] != (cfg.data.img_size, cfg.data.img_size) else s
              for s in corpus]
    by_id = {s.id: s for s in corpus}
    manifest_path = data_root / "manifest.txt"
    if manifest_path.exists():
        manifest = read_manifest(manifest_path, seed=cfg.seed)
    elif cfg.data.split_mode == "counts":
        manifest = split_counts(sorted(by_id), cfg.data.counts, cfg.seed)
    else:
        manifest = split(sorted(by_id), cfg.data.ratios, cfg.seed)
    missing = [i for name in ("train", "valid", "test")
               for i in manifest.ids(name) if i not in by_id]
    if missing:
        raise ValueError(f"manifest names {len(missing)} unknown ids, e.g. {missing[0]!r}")
    splits = {name: [by_id[i] for i in manifest.ids(name)]
              for name in ("train", "valid", "test")}
    if need_valid and not splits["valid"]:
        raise ValueError("split has no validation ids; two-way (counts) splits "
                         "cannot drive plateau scheduling")
    return splits, manifest


def _write_history_svg(run_dir: Path) -> None:
    rows = list(csv.DictReader(io.StringIO((run_dir / "history.csv").read_text())))
    if not rows:
        return
    series = {
        "train_loss": [float(r["train_loss"]) for r in rows],
        "valid_loss": [float(r["valid_loss"]) for r in rows],
    }
    svgplot.line_chart(series, "training loss", run_dir / "loss_curve.svg",
                       x_label="epoch", y_label="loss")
    svgplot.line_chart({"valid_dsc": [float(r["valid_dsc"]) for r in rows]},
                       "validation dice", run_dir / "valid_dsc.svg",
                       x_label="epoch", y_label="dsc")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    samples = synth_dataset(args.n, args.size, args.seed)
    out = Path(args.out)
    save_corpus(samples, out)
    print(f"wrote {len(samples)} image/mask pairs to {out}")
    return 0


def cmd_train(args) -> int:
    if args.resume:
        run_dir = Path(args.resume)
        cfg = load_config(run_dir / "config.json")
        data_root = Path(args.data) if args.data else Path(cfg.data.root)
        splits, _ = _prepare_splits(cfg, data_root)
        summary = run_training(cfg, splits, run_dir, resume=True, log=print)
    else:
        cfg = _load_run_config(args)
        if not cfg.data.root:
            raise ConfigError("no dataset: pass --data or set data.root in the config")
        data_root = Path(cfg.data.root)
        splits, manifest = _prepare_splits(cfg, data_root)
        run_dir = Path(args.out) / cfg.run_name()
        run_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(manifest, run_dir / "manifest.txt")
        summary = run_training(cfg, splits, run_dir, log=print)
    _write_history_svg(Path(summary["run_dir"]))
    print(f"run dir: {summary['run_dir']}")
    print(f"best valid loss: {summary['best_valid_loss']:.6f}")
    if summary["stopped_epoch"]:
        print(f"early stop at epoch {summary['stopped_epoch']}")
    return 0


def cmd_eval(args) -> int:
    model, _, meta = load_model_checkpoint(args.ckpt)
    cfg = RunConfig()
    ckpt_dir = Path(args.ckpt).parent
    if (ckpt_dir / "config.json").exists():
        cfg = load_config(ckpt_dir / "config.json")
    data_root = Path(args.data)
    splits, _ = _prepare_splits(cfg, data_root, need_valid=False)
    samples = splits[args.split]
    if not samples:
        raise ValueError(f"split {args.split!r} is empty")
    report = evaluate(model, samples, threshold=args.threshold)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_csv())
    report_path.with_suffix(".json").write_text(report.to_json() + "\n")
    mean = report.mean()
    print(f"evaluated {len(samples)} images from split {args.split!r}")
    print(", ".join(f"{k}={mean[k]:.4f}" for k in ("dsc", "miou", "recall",
                                                   "precision", "accuracy", "f2")))
    print(f"mean latency {report.mean_ms:.2f} ms/image ({report.fps:.1f} FPS, batch 1)")
    return 0


def cmd_infer(args) -> int:
    model, _, _ = load_model_checkpoint(args.ckpt)
    image = load_netpbm(args.image)
    h, w = image.shape[2:]
    fh = args.size if args.size else (h if h % 16 == 0 else max(16, round(h / 16) * 16))
    fw = args.size if args.size else (w if w % 16 == 0 else max(16, round(w / 16) * 16))
    x = data_mod.resize_bilinear(image, (fh, fw))
    collect = {} if args.dump_activations else None
    pred = model.forward(x, training=False, collect=collect)
    mask = Tensor((pred.data >= args.threshold).astype(np.float32))
    if (fh, fw) != (h, w):
        mask = data_mod.resize_nearest(mask, (h, w))
    save_netpbm(mask, args.out_mask)
    if args.dump_activations:
        dump_dir = Path(args.dump_activations)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for key, t in collect.items():
            save_tensor(dump_dir / f"{key}.mkdt", t)
        print(f"dumped {len(collect)} activations to {dump_dir}")
    frac = float(mask.data.mean())
    print(f"wrote {args.out_mask} (positive fraction {frac:.4f})")
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    failed = []
    for name, err in checks.run_suite(args.module):
        status = "PASS" if err < checks.TOLERANCE else "FAIL"
        print(f"{name:32s} max_rel_err={err:.3e} {status}")
        worst = max(worst, err)
        if err >= checks.TOLERANCE:
            failed.append(name)
    print(f"worst={worst:.3e} tolerance={checks.TOLERANCE:.0e}")
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    model, _, _ = load_model_checkpoint(args.ckpt)
    shape = (1, model.cfg.in_channels, args.size, args.size)
    mean_ms, std_ms, fps = fps_bench(lambda x: model.forward(x, training=False),
                                     shape, warmup=args.warmup, iters=args.iters)
    print(f"input {args.size}x{args.size}, batch 1: "
          f"{mean_ms:.2f} +/- {std_ms:.2f} ms/image, {fps:.2f} FPS "
          f"({args.iters} iters after {args.warmup} warmup)")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_run_config(args)
    if not cfg.data.root:
        raise ConfigError("no dataset: pass --data or set data.root in the config")
    data_root = Path(cfg.data.root)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, (label, use_mkdc, use_msff) in enumerate(ABLATION_VARIANTS, start=1):
        variant = apply_overrides(cfg, [f"model.use_mkdc={str(use_mkdc).lower()}",
                                        f"model.use_msff={str(use_msff).lower()}"])
        splits, _ = _prepare_splits(variant, data_root)
        run_dir = out / f"variant{idx}_{variant.hash()}"
        print(f"[{idx}/4] {label}")
        run_training(variant, splits, run_dir, log=print)
        model, _, _ = load_model_checkpoint(run_dir / "best.ckpt")
        report = evaluate(model, splits["test"], threshold=variant.threshold)
        mean = report.mean()
        rows.append((idx, label, mean["dsc"], mean["miou"], mean["recall"],
                     mean["precision"]))
    csv_path = out / "ablation.csv"
    with open(csv_path, "w") as f:
        f.write("no,method,dsc,miou,recall,precision\n")
        for idx, label, dsc, miou, rec, prec in rows:
            f.write(f'{idx},"{label}",{repr(dsc)},{repr(miou)},{repr(rec)},{repr(prec)}\n')
    svgplot.bar_chart([f"#{r[0]}" for r in rows], [r[2] for r in rows],
                      "ablation: test dice", out / "ablation.svg", y_label="dsc")
    print(f"wrote {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mkdcnet",
                                     description="Train and run the multiple-kernel "
                                                 "dilated convolution segmentation network.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic blob corpus")
    p.add_argument("--n", type=int, default=200, help="number of samples (default 200)")
    p.add_argument("--size", type=int, default=64, help="square image size (default 64)")
    p.add_argument("--seed", type=int, default=7, help="generator seed (default 7)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="JSON run config (defaults used when omitted)")
    p.add_argument("--data", help="corpus root (overrides config data.root)")
    p.add_argument("--out", default="runs", help="parent directory for run dirs (default runs)")
    p.add_argument("--resume", help="existing run directory to continue")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--epochs", type=int, help="override config train.epochs")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. --set model.trunk_width=32")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="corpus root")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"),
                   help="which split to score (default test)")
    p.add_argument("--report", required=True, help="output CSV path (JSON written alongside)")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="mask threshold (default 0.5)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="segment one image")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--image", required=True, help="input PPM image")
    p.add_argument("--out-mask", required=True, help="output PGM mask")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="mask threshold (default 0.5)")
    p.add_argument("--size", type=int, help="force forward resolution (multiple of 16)")
    p.add_argument("--dump-activations", metavar="DIR",
                   help="dump intermediate feature maps as .mkdt files")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    p.add_argument("--module", help="only run entries under this prefix "
                                    "(ops, loss, blocks, model)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="single-image latency benchmark")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--iters", type=int, default=20, help="timed iterations (default 20)")
    p.add_argument("--warmup", type=int, default=3, help="warmup iterations (default 3)")
    p.add_argument("--size", type=int, default=256, help="square input size (default 256)")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("ablate", help="train and score all four block-toggle variants")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--data", help="corpus root (overrides config data.root)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--epochs", type=int, help="override config train.epochs")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except EXPECTED_ERRORS as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
