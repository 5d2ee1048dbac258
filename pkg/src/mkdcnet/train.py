"""Training and evaluation loops.

Each run lives in its own directory (named by config hash + seed) holding
the echoed config, an append-only history CSV, the best-validation-loss
checkpoint, and a resumable last-epoch checkpoint. All randomness is
derived from (seed, epoch, sample), so a resumed run replays the exact
batch and augmentation streams of an uninterrupted one.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import data as data_mod
from .checkpoint import load_model_checkpoint, save_model_checkpoint
from .config import RunConfig
from .losses import bce_dice_loss, bce_loss, dice_loss
from .metrics import MetricReport, confusion, metrics_from_counts
from .model import MKDCNet, build_model
from .optim import Adam, EarlyStopper, PlateauScheduler
from .ops import add, scale
from .tape import GradTape
from .tensor import Tensor

HISTORY_HEADER = "epoch,train_loss,valid_loss,valid_dsc,valid_miou,lr"


class TrainingDiverged(RuntimeError):
    pass


def _loss(pred: Tensor, target: Tensor, cfg: RunConfig) -> Tensor:
    if cfg.train.bce_weight == 1.0 and cfg.train.dice_weight == 1.0:
        return bce_dice_loss(pred, target)
    return add(scale(bce_loss(pred, target), cfg.train.bce_weight),
               scale(dice_loss(pred, target), cfg.train.dice_weight))


def _history_row(epoch, train_loss, valid_loss, valid_dsc, valid_miou, lr) -> str:
    return ",".join([str(epoch), repr(float(train_loss)), repr(float(valid_loss)),
                     repr(float(valid_dsc)), repr(float(valid_miou)), repr(float(lr))])


def train_epoch(model: MKDCNet, optimizer: Adam, train_samples, cfg: RunConfig,
                epoch: int) -> float:
    """One pass over the training split; returns the sample-weighted mean loss."""
    shuffle_rng = data_mod.epoch_rng(cfg.seed, epoch)
    total = 0.0
    count = 0
    for ids, images, masks in data_mod.batches(train_samples, cfg.train.batch_size,
                                               rng=shuffle_rng):
        augmented = [data_mod.augment(
            data_mod.Sample(i, Tensor(images.data[k:k + 1]), Tensor(masks.data[k:k + 1])),
            cfg.augment, data_mod.sample_rng(cfg.seed, epoch, i))
            for k, i in enumerate(ids)]
        x = Tensor(np.concatenate([s.image.data for s in augmented], axis=0))
        t = Tensor(np.concatenate([s.mask.data for s in augmented], axis=0))
        optimizer.zero_grad()
        with GradTape() as tape:
            pred = model.forward(x, training=True)
            loss = _loss(pred, t, cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch} "
                                       f"on batch ids {ids}")
            tape.backward(loss)
        optimizer.step()
        total += value * len(ids)
        count += len(ids)
    return total / count


def validate(model: MKDCNet, samples, cfg: RunConfig) -> tuple[float, float, float]:
    """Eval-mode loss plus mean DSC and mean IoU over the split."""
    total = 0.0
    count = 0
    dscs = []
    ious = []
    for ids, images, masks in data_mod.batches(samples, cfg.train.batch_size):
        pred = model.forward(images, training=False)
        total += _loss(pred, masks, cfg).item() * len(ids)
        count += len(ids)
        for k in range(len(ids)):
            row = metrics_from_counts(confusion(pred.data[k], masks.data[k], cfg.threshold))
            dscs.append(row["dsc"])
            ious.append(row["miou"])
    return total / count, float(np.mean(dscs)), float(np.mean(ious))


def run_training(cfg: RunConfig, splits: dict[str, list], run_dir,
                 resume: bool = False, log=None) -> dict:
    """Train per the config; returns a summary dict.

    `splits` maps 'train'/'valid' (and optionally 'test') to sample lists.
    With resume=True, picks up from `run_dir`/last.ckpt and appends to the
    existing history so the file ends up identical to an uninterrupted run.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if not splits.get("train"):
        raise ValueError("training split is empty")
    if not splits.get("valid"):
        raise ValueError("validation split is empty (required for scheduling)")

    history_path = run_dir / "history.csv"
    best_path = run_dir / "best.ckpt"
    last_path = run_dir / "last.ckpt"
    (run_dir / "config.json").write_text(cfg.to_json() + "\n")

    model = build_model(cfg.model)
    optimizer = Adam(model.named_params(), lr=cfg.optim.lr, beta1=cfg.optim.beta1,
                     beta2=cfg.optim.beta2, eps=cfg.optim.eps,
                     grad_clip=cfg.optim.grad_clip)
    scheduler = PlateauScheduler(optimizer, factor=cfg.scheduler.factor,
                                 patience=cfg.scheduler.patience,
                                 min_lr=cfg.scheduler.min_lr)
    stopper = EarlyStopper(patience=cfg.early_stop.patience)

    start_epoch = 1
    best_valid = float("inf")
    if resume:
        if not last_path.exists():
            raise FileNotFoundError(f"cannot resume: {last_path} missing")
        loaded, opt_arrays, meta = load_model_checkpoint(last_path)
        model.load_arrays({n: t.data for n, t in loaded.named_params().items()},
                          loaded.named_buffers())
        state = meta["train_state"]
        optimizer.load_state(opt_arrays, meta["optimizer"])
        scheduler.load_state(state["scheduler"])
        stopper.load_state(state["stopper"])
        start_epoch = int(state["epoch"]) + 1
        best_valid = float(state["best_valid"])
    else:
        history_path.write_text(HISTORY_HEADER + "\n")

    stopped = None
    epoch = start_epoch - 1
    for epoch in range(start_epoch, cfg.train.epochs + 1):
        t0 = time.perf_counter()
        train_loss = train_epoch(model, optimizer, splits["train"], cfg, epoch)
        valid_loss, valid_dsc, valid_miou = validate(model, splits["valid"], cfg)
        scheduler.step(valid_loss)
        row = _history_row(epoch, train_loss, valid_loss, valid_dsc, valid_miou, optimizer.lr)
        with open(history_path, "a") as f:
            f.write(row + "\n")
        if log:
            log(f"epoch {epoch}: train_loss={train_loss:.4f} valid_loss={valid_loss:.4f} "
                f"valid_dsc={valid_dsc:.4f} lr={optimizer.lr:.2e} "
                f"({time.perf_counter() - t0:.1f}s)")
        if valid_loss < best_valid:
            best_valid = valid_loss
            save_model_checkpoint(best_path, model, train_state={"epoch": epoch,
                                                                 "valid_loss": valid_loss})
        save_model_checkpoint(last_path, model, optimizer=optimizer,
                              train_state={"epoch": epoch, "best_valid": best_valid,
                                           "scheduler": scheduler.state_meta(),
                                           "stopper": stopper.state_meta()})
        if stopper.step(valid_loss):
            stopped = epoch
            break
    return {"run_dir": str(run_dir), "best_valid_loss": best_valid,
            "stopped_epoch": stopped, "epochs_run": epoch - start_epoch + 1,
            "history": str(history_path), "best_ckpt": str(best_path),
            "last_ckpt": str(last_path)}


def evaluate(model: MKDCNet, samples, threshold: float = 0.5) -> MetricReport:
    """Per-image metrics with single-image forward timing, eval-mode BN."""
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    report = MetricReport(threshold=threshold)
    times = []
    for s in samples:
        t0 = time.perf_counter()
        pred = model.forward(s.image, training=False)
        times.append((time.perf_counter() - t0) * 1000.0)
        report.add(s.id, confusion(pred.data, s.mask.data, threshold))
    report.mean_ms = float(np.mean(times))
    report.std_ms = float(np.std(times))
    return report
