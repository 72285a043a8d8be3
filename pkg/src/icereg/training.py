"""Adam training on the MAE objective, evaluation, and report emission.

Defaults follow the experimental protocol: 100 epochs, learning rate 1e-4,
batch size 32, Adam with beta1=0.9, beta2=0.999, eps=1e-8. Everything is
deterministic given (model seed, data, config): per-epoch shuffles are
derived from (config.seed, epoch) and all reductions run in index order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import pgm
from . import tensor as T
from .backbones import Model, model_forward, save_model
from .errors import ConfigurationError, ContractError, TrainingError
from .groundtruth import DatasetIndex, pixels_to_cm
from .rng import Rng


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle: bool = True

    def validate(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not (0 <= b < 1):
                raise ConfigurationError(f"{name} must be in [0,1), got {b}")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")


class AdamState:
    """First/second moment accumulators per parameter plus a step counter."""

    def __init__(self, params: dict[str, T.Tensor]):
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0


def adam_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray],
              state: AdamState, config: TrainConfig):
    """One Adam update over all parameters; increments t exactly once."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        update = config.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + config.epsilon)
        p.data = (p.data - update).astype(p.data.dtype)


@dataclass
class LossRecord:
    """Per-epoch MAE rows (pixels)."""

    rows: list = field(default_factory=list)  # of (epoch, train_mae, test_mae|None)

    def append(self, epoch: int, train_mae: float, test_mae: Optional[float]):
        if self.rows and epoch <= self.rows[-1][0]:
            raise ContractError("loss record epochs must strictly increase")
        self.rows.append((epoch, train_mae, test_mae))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["epoch", "train_mae_px", "test_mae_px"])
        for epoch, train_mae, test_mae in self.rows:
            writer.writerow([epoch, f"{train_mae:.10g}",
                             "" if test_mae is None else f"{test_mae:.10g}"])
        return buf.getvalue()

    def write(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


def load_samples(dataset: DatasetIndex) -> tuple[np.ndarray, np.ndarray]:
    """Images -> [N,1,H,W] float32 in [0,1]; targets -> [N,27] float32."""
    if len(dataset) == 0:
        raise ContractError(f"dataset split {dataset.split!r} is empty")
    images = np.stack([pgm.load_image(img) for img, _, _ in dataset.entries])
    targets = np.stack([tv.values for _, _, tv in dataset.entries]).astype(np.float32)
    return images[:, None, :, :].astype(np.float32), targets


def _check_input_dims(model: Model, images: np.ndarray):
    expected = (model.spec.input_height, model.spec.input_width)
    if images.shape[2:] != expected:
        raise ContractError(
            f"dataset images are {images.shape[2]}x{images.shape[3]}, model "
            f"expects {expected[0]}x{expected[1]}")


def train(model: Model, train_set: DatasetIndex, config: TrainConfig,
          eval_set: Optional[DatasetIndex] = None,
          stop_below: Optional[float] = None) -> tuple[Model, LossRecord]:
    """Train in place; returns the model and per-epoch MAE record.

    ``stop_below`` optionally ends training early once the epoch train MAE
    drops below the given value (the record then stops at that epoch).
    """
    config.validate()
    images, targets = load_samples(train_set)
    _check_input_dims(model, images)
    n = images.shape[0]
    k = model.spec.output_nodes
    state = AdamState(model.params)
    shuffle_rng = Rng(config.seed)
    record = LossRecord()

    for epoch in range(1, config.epochs + 1):
        if config.shuffle:
            order = shuffle_rng.substream(f"shuffle.{epoch}").permutation(n)
        else:
            order = np.arange(n)
        epoch_total = 0.0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            xb = T.Tensor(images[batch_idx])
            yb = T.Tensor(targets[batch_idx])
            T.zero_grad(model.params.values())
            try:
                with T.Tape() as tape:
                    pred = model_forward(model, xb, mode="train")
                    loss = T.mae_loss(pred, yb, k=k)
                grads = T.gradients(loss, tape, list(model.params.values()))
            except T.NumericsError as exc:
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, step {start // config.batch_size}: "
                    f"{exc}") from exc
            adam_step(model.params,
                      dict(zip(model.params.keys(), grads)), state, config)
            epoch_total += loss.item() * len(batch_idx)
        train_mae = epoch_total / n
        test_mae = evaluate(model, eval_set) if eval_set is not None else None
        record.append(epoch, train_mae, test_mae)
        if stop_below is not None and train_mae < stop_below:
            break
    model.adam_state = state
    return model, record


def evaluate(model: Model, dataset: DatasetIndex, batch_size: int = 64) -> float:
    """Eval-mode corpus MAE in pixels; mean of per-sample MAEs in index order."""
    images, targets = load_samples(dataset)
    _check_input_dims(model, images)
    n = images.shape[0]
    k = model.spec.output_nodes
    total = 0.0
    for start in range(0, n, batch_size):
        xb = T.Tensor(images[start:start + batch_size])
        pred = model_forward(model, xb, mode="eval")
        per_sample = np.abs(pred.data - targets[start:start + batch_size]).sum(axis=1) / k
        for s in per_sample:  # fixed index-order accumulation
            total += float(s)
    return total / n


def predict_mean_baseline(train_set: DatasetIndex, eval_set: DatasetIndex) -> float:
    """MAE of always predicting the training-set mean target."""
    _, train_targets = load_samples(train_set)
    _, eval_targets = load_samples(eval_set)
    mean = train_targets.mean(axis=0)
    per_sample = np.abs(eval_targets - mean).sum(axis=1) / eval_targets.shape[1]
    return float(per_sample.mean())


# ---------------------------------------------------------------------------
# reports and checkpoints

def report_table(results, resolution_cm_per_pixel: float = 4.0) -> tuple[str, str]:
    """(formatted table, CSV) from (kind, train_mae_px, test_mae_px) rows.

    Rows sort by test MAE ascending (stable on ties); the best row is
    flagged in the table.
    """
    if not results:
        raise ContractError("report_table requires at least one result row")
    ordered = sorted(results, key=lambda r: r[2])

    csv_buf = io.StringIO()
    writer = csv.writer(csv_buf)
    writer.writerow(["backbone", "train_mae_px", "test_mae_px",
                     "train_mae_cm", "test_mae_cm"])
    lines = [f"{'backbone':<16} {'train px':>9} {'test px':>9} "
             f"{'train cm':>9} {'test cm':>9}"]
    for i, (kind, train_px, test_px) in enumerate(ordered):
        train_cm = pixels_to_cm(train_px, resolution_cm_per_pixel)
        test_cm = pixels_to_cm(test_px, resolution_cm_per_pixel)
        writer.writerow([kind, f"{train_px:.10g}", f"{test_px:.10g}",
                         f"{train_cm:.10g}", f"{test_cm:.10g}"])
        flag = " *best" if i == 0 else ""
        lines.append(f"{kind:<16} {train_px:>9.3f} {test_px:>9.3f} "
                     f"{train_cm:>9.3f} {test_cm:>9.3f}{flag}")
    return "\n".join(lines) + "\n", csv_buf.getvalue()


def save_training_checkpoint(model: Model, path, state: Optional[AdamState] = None):
    """Model checkpoint, optionally with optimizer state appended."""
    extra = {}
    if state is not None:
        for name in model.params:
            extra[f"adam.m.{name}"] = state.m[name]
            extra[f"adam.v.{name}"] = state.v[name]
        extra["adam.t"] = np.array(float(state.t), dtype=np.float32)
    save_model(model, path, extra=extra)


def restore_adam_state(model: Model, extras: dict) -> Optional[AdamState]:
    """Rebuild optimizer state from checkpoint extras, if present."""
    if "adam.t" not in extras:
        return None
    state = AdamState(model.params)
    state.t = int(round(float(extras["adam.t"])))
    for name in model.params:
        state.m[name] = extras[f"adam.m.{name}"]
        state.v[name] = extras[f"adam.v.{name}"]
    return state
