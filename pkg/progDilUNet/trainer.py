# -*- coding: utf-8 -*-
"""
Training and inference loops.

An epoch is one pass over the training split in a seeded permutation, in
mini-batches assembled by a background feeder thread.  After each epoch the
model is scored on the validation split, the plateau schedule is fed the
mean foreground DSC, one tab separated line is appended to the training log,
`last.dlck` is rewritten and `best.dlck` is replaced on strict improvement.
"""
import logging
import math
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from progDilUNet.arch import Model, NetSpec, build
from progDilUNet.checkpoint import (
    load_checkpoint,
    restore_model,
    restore_training,
    save_checkpoint,
    snapshot,
)
from progDilUNet.exceptions import ConfigError, TrainingFault
from progDilUNet.layers import softmax, softmax_xent
from progDilUNet.loader import Dataset, open_split
from progDilUNet.metrics import LabelMap, slice_report
from progDilUNet.optim import Adam, PlateauSchedule, schedule_update
from progDilUNet.pduConstantes import CLASS_NAMES, MODEL_NAMES, N_CLASSES
from progDilUNet.pdu_types import modelT
from progDilUNet.settings import (
    BASE_WIDTH_DFT,
    BATCH_SIZE_DFT,
    BEST_CKPT_NAME,
    CHECKPOINT_DIR_DFT,
    CLASSES_DFT,
    DATASET_DFT,
    DEPTH_DFT,
    EPOCHS_DFT,
    EVAL_CLASSES_DFT,
    LAST_CKPT_NAME,
    LR_DFT,
    LR_FACTOR_DFT,
    MODEL_DFT,
    PATIENCE_DFT,
    PREFETCH_DFT,
    SEED_DFT,
    TRAIN_LOG_NAME,
)

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    model: modelT = MODEL_DFT
    dataset: str = DATASET_DFT
    epochs: int = EPOCHS_DFT
    batch_size: int = BATCH_SIZE_DFT
    lr: float = LR_DFT
    seed: int = SEED_DFT
    checkpoint_dir: str = CHECKPOINT_DIR_DFT
    eval_classes: Tuple[int, ...] = EVAL_CLASSES_DFT
    base_width: int = BASE_WIDTH_DFT
    classes: int = CLASSES_DFT
    depth: int = DEPTH_DFT
    input_size: Optional[int] = None  # taken from the dataset when None
    patience: int = PATIENCE_DFT
    lr_factor: float = LR_FACTOR_DFT
    prefetch: int = PREFETCH_DFT
    resume: Optional[str] = None

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.model!r}, use one of {MODEL_NAMES}")
        if int(self.batch_size) < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.classes != N_CLASSES:
            raise ConfigError(f"the phantom labels use {N_CLASSES} classes, got classes={self.classes}")
        if self.epochs < 0 or self.patience < 1 or not 0 < self.lr_factor < 1:
            raise ConfigError("epochs >= 0, patience >= 1 and 0 < lr_factor < 1 are required")
        if isinstance(self.eval_classes, int):
            self.eval_classes = (self.eval_classes,)
        self.eval_classes = tuple(int(c) for c in self.eval_classes)
        bad = [c for c in self.eval_classes if c not in CLASS_NAMES]
        if bad:
            raise ConfigError(f"unknown eval classes {bad}")
        self.prefetch = max(1, int(self.prefetch))

    @property
    def log_file(self) -> Path:
        return Path(self.checkpoint_dir) / TRAIN_LOG_NAME

    @property
    def best_file(self) -> Path:
        return Path(self.checkpoint_dir) / BEST_CKPT_NAME

    @property
    def last_file(self) -> Path:
        return Path(self.checkpoint_dir) / LAST_CKPT_NAME


@dataclass
class TrainResult:
    model: Model
    epochs_run: int
    best_dsc: Optional[float]
    history: pd.DataFrame = field(default_factory=pd.DataFrame)


# #### batches ####
class BatchFeeder:
    """Mini-batches of a dataset in a given order, loaded by one producer thread.

    At most `prefetch` batches wait in the queue.  Errors raised while
    loading are re-raised in the consuming thread.
    """

    _DONE = object()

    def __init__(self, ds: Dataset, order: Sequence[int], batch_size: int, prefetch: int = PREFETCH_DFT):
        self.ds = ds
        self.batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
        self.queue: queue.Queue = queue.Queue(maxsize=prefetch)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, name="batch-feeder", daemon=True)

    def _put(self, item) -> bool:
        while not self._stop.is_set():
            try:
                self.queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self) -> None:
        try:
            for idx in self.batches:
                if not self._put(self.ds.arrays(idx)):
                    return
        except BaseException as e:  # handed to the consumer
            self._put(e)
            return
        self._put(self._DONE)

    def __len__(self) -> int:
        return len(self.batches)

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        self._thread.start()
        try:
            while True:
                item = self.queue.get()
                if item is self._DONE:
                    return
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            self._stop.set()
            self._thread.join()


# #### inference ####
def predict_proba(model: Model, x: np.ndarray, batch_size: int = BATCH_SIZE_DFT) -> np.ndarray:
    """Softmax probabilities (N, classes, H, W) in inference mode."""
    model.eval()
    out = [softmax(model.forward(x[i:i + batch_size])) for i in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


def predict_labels(model: Model, x: np.ndarray, batch_size: int = BATCH_SIZE_DFT) -> np.ndarray:
    return predict_proba(model, x, batch_size).argmax(axis=1).astype(np.uint8)


def evaluate_split(
    model: Optional[Model],
    ds: Dataset,
    classes: Sequence[int] = EVAL_CLASSES_DFT,
    batch_size: int = BATCH_SIZE_DFT,
) -> pd.DataFrame:
    """Per-sample metric rows of ds; model None scores the truth against itself."""
    items = []
    for start in range(0, len(ds), batch_size):
        idx = list(range(start, min(start + batch_size, len(ds))))
        x, y = ds.arrays(idx)
        pred = y if model is None else predict_labels(model, x, batch_size)
        for i, j in enumerate(idx):
            truth = LabelMap(y[i], ds.spacing)
            items.append((ds.ids[j], truth, LabelMap(pred[i], ds.spacing)))
    return slice_report(items, classes)


def class_means(report: pd.DataFrame) -> Dict[str, float]:
    """Mean DSC per class name, NaN rows skipped."""
    return report.groupby("class", sort=False)["dsc"].mean().to_dict()


def time_inference(model: Model, ds: Dataset, warmup: int = 1) -> List[float]:
    """Per-slice forward time in ms, after `warmup` untimed passes on the first slice."""
    model.eval()
    first, _ = ds[0]
    for _ in range(warmup):
        model.forward(first.data)
    times = []
    for i in range(len(ds)):
        x, _ = ds[i]
        t0 = time.perf_counter()
        model.forward(x.data)
        times.append((time.perf_counter() - t0) * 1000.0)
    return times


# #### training ####
def _append_log(fname: Path, row: dict) -> None:
    df = pd.DataFrame([row])
    df.to_csv(fname, sep="\t", mode="a", header=not fname.exists(), index=False)


def read_log(fname) -> pd.DataFrame:
    return pd.read_csv(fname, sep="\t")


def _start(cfg: RunConfig, input_size: int):
    """Model, optimizer, schedule, generator, first epoch and best DSC."""
    if cfg.resume:
        ckpt = load_checkpoint(cfg.resume)
        if ckpt.spec.name != cfg.model:
            raise ConfigError(f"checkpoint holds {ckpt.spec.name}, asked to train {cfg.model}")
        model = restore_model(ckpt)
        opt = Adam(model.parameters(), lr=cfg.lr)
        sched = PlateauSchedule(lr=cfg.lr, patience=cfg.patience, factor=cfg.lr_factor)
        rng = restore_training(ckpt, model, opt, sched)
        logger.warning(f"Resuming {cfg.model} from {cfg.resume} after epoch {ckpt.epoch}")
        return model, opt, sched, rng, ckpt.epoch, ckpt.state.get("best_dsc")

    if cfg.input_size is not None and cfg.input_size != input_size:
        raise ConfigError(f"network input_size {cfg.input_size}, {cfg.dataset} holds {input_size} px images")
    spec = NetSpec(name=cfg.model, base_width=cfg.base_width, classes=cfg.classes,
                   input_size=input_size, depth=cfg.depth)
    model = build(spec, seed=cfg.seed)
    opt = Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauSchedule(lr=cfg.lr, patience=cfg.patience, factor=cfg.lr_factor)
    if cfg.log_file.exists():
        cfg.log_file.unlink()
    return model, opt, sched, np.random.default_rng(cfg.seed), 0, None


def train_epoch(model: Model, opt: Adam, feeder: BatchFeeder, epoch: int) -> float:
    """One pass over the feeder, mean training loss."""
    model.train()
    losses = []
    for b, (x, y) in enumerate(feeder):
        model.zero_grad()
        logits = model.forward(x)
        loss, grad = softmax_xent(logits, y)
        if not math.isfinite(loss):
            raise TrainingFault(f"loss is {loss} at epoch {epoch}, batch {b}")
        model.backward(grad.data)
        opt.step()
        losses.append(loss)
    return float(np.mean(losses)) if losses else math.nan


def train(cfg: RunConfig) -> TrainResult:
    """Train cfg.model on the train split of cfg.dataset, validating on val."""
    train_ds = open_split(cfg.dataset, "train")
    val_ds = open_split(cfg.dataset, "val")
    x0, _ = train_ds[0]
    Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)

    model, opt, sched, rng, start, best = _start(cfg, x0.shape.dims[2])
    rows = []
    epoch = start
    for epoch in range(start + 1, cfg.epochs + 1):
        order = rng.permutation(len(train_ds)).tolist()
        lr = opt.lr
        feeder = BatchFeeder(train_ds, order, cfg.batch_size, cfg.prefetch)
        try:
            loss = train_epoch(model, opt, feeder, epoch)
            means = class_means(evaluate_split(model, val_ds, cfg.eval_classes, cfg.batch_size))
            mean_dsc = float(np.nanmean(list(means.values()))) if means else math.nan
            opt.lr = schedule_update(sched, mean_dsc)
        except TrainingFault as e:
            logger.error(f"Epoch {epoch}: {e}, last good checkpoint is {cfg.last_file}")
            raise

        row = {"epoch": epoch, "train_loss": loss}
        row.update({f"dsc_{name}": v for name, v in means.items()})
        row.update({"mean_dsc": mean_dsc, "lr": lr})
        _append_log(cfg.log_file, row)
        rows.append(row)
        logger.info("\t".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))

        improved = best is None or mean_dsc > best
        if improved:
            best = mean_dsc
        ckpt = snapshot(model, opt, sched, epoch, best, rng)
        if improved:
            save_checkpoint(cfg.best_file, ckpt)
        save_checkpoint(cfg.last_file, ckpt)

    model.eval()
    return TrainResult(model, epoch - start, best, pd.DataFrame(rows))
