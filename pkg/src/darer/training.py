"""Adam optimizer, mini-batch training with validation-based selection, and
the two evaluation conventions (plain macro, and neutral-ignored sentiment
with prevalence-weighted acts).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ConfigError, Dialog, validate_corpus
from .model import DarerModel

log = logging.getLogger("darer")

CONVENTIONS = ("macro", "ignore-neutral-weighted")

LOG_KEYS = (
    "epoch", "loss_total",
    "loss_estimate_S", "loss_margin_S", "loss_pred_S",
    "loss_estimate_A", "loss_margin_A", "loss_pred_A",
    "valid_f1_S", "valid_f1_A",
)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    eval_convention: str = "macro"
    clip_norm: float = 5.0     # global gradient-norm ceiling; 0 disables

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_convention not in CONVENTIONS:
            raise ConfigError(
                f"eval_convention must be one of {CONVENTIONS}, got {self.eval_convention!r}"
            )
        if self.clip_norm < 0:
            raise ConfigError(f"clip_norm must be >= 0, got {self.clip_norm}")


# --- metrics ---

@dataclass
class TaskMetrics:
    precision: float
    recall: float
    f1: float
    per_class: list[tuple[float, float, float]] = field(default_factory=list)


@dataclass
class Metrics:
    sentiment: TaskMetrics
    act: TaskMetrics

    @property
    def avg_f1(self) -> float:
        return 0.5 * (self.sentiment.f1 + self.act.f1)


def _per_class_prf(preds, golds, n_classes) -> list[tuple[float, float, float]]:
    preds = np.asarray(preds, dtype=np.int64)
    golds = np.asarray(golds, dtype=np.int64)
    if preds.shape != golds.shape:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {golds.shape} golds")
    out = []
    for c in range(n_classes):
        tp = int(np.sum((preds == c) & (golds == c)))
        fp = int(np.sum((preds == c) & (golds != c)))
        fn = int(np.sum((preds != c) & (golds == c)))
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        out.append((p, r, f1))
    return out


def macro_prf(preds, golds, n_classes: int) -> TaskMetrics:
    """Unweighted mean of per-class precision/recall/F1; 0/0 counts as 0."""
    per_class = _per_class_prf(preds, golds, n_classes)
    arr = np.asarray(per_class)
    return TaskMetrics(*(float(v) for v in arr.mean(axis=0)), per_class=per_class)


def macro_prf_excluding(preds, golds, n_classes: int, exclude: int) -> TaskMetrics:
    """Macro average leaving one class out of the mean; the confusion counts
    still include every utterance, so misfires into the excluded class count."""
    per_class = _per_class_prf(preds, golds, n_classes)
    kept = np.asarray([prf for c, prf in enumerate(per_class) if c != exclude])
    if kept.size == 0:
        raise ValueError("cannot exclude the only class from the macro average")
    return TaskMetrics(*(float(v) for v in kept.mean(axis=0)), per_class=per_class)


def prevalence_weighted_prf(preds, golds, n_classes: int, class_counts=None) -> TaskMetrics:
    """Per-class scores averaged with weights proportional to gold frequency."""
    per_class = _per_class_prf(preds, golds, n_classes)
    if class_counts is None:
        class_counts = np.bincount(np.asarray(golds, dtype=np.int64), minlength=n_classes)
    weights = np.asarray(class_counts, dtype=np.float64)
    total = weights.sum()
    if total == 0:
        raise ValueError("prevalence weights sum to zero")
    weights = weights / total
    arr = np.asarray(per_class)
    return TaskMetrics(*(float(v) for v in weights @ arr), per_class=per_class)


def ignore_neutral_weighted_metrics(preds_s, golds_s, preds_a, golds_a,
                                    neutral_idx: int, n_sentiments: int, n_acts: int,
                                    act_class_counts=None) -> Metrics:
    """Sentiment macro over non-neutral classes, acts weighted by prevalence."""
    return Metrics(
        sentiment=macro_prf_excluding(preds_s, golds_s, n_sentiments, neutral_idx),
        act=prevalence_weighted_prf(preds_a, golds_a, n_acts, act_class_counts),
    )


def evaluate(model: DarerModel, dialogs: list[Dialog], convention: str = "macro") -> Metrics:
    """Predict every dialog (eval mode) and score the concatenated streams."""
    if convention not in CONVENTIONS:
        raise ConfigError(f"unknown evaluation convention {convention!r}")
    if not dialogs:
        raise ValueError("cannot evaluate an empty corpus")
    preds_s, golds_s, preds_a, golds_a = [], [], [], []
    for start in range(0, len(dialogs), 32):
        chunk = dialogs[start:start + 32]
        for (ps, pa), dialog in zip(model.predict_batch(chunk), chunk):
            preds_s += ps
            preds_a += pa
            golds_s += [u.sentiment for u in dialog.utterances]
            golds_a += [u.act for u in dialog.utterances]
    vocab = model.label_vocab
    if convention == "macro":
        return Metrics(
            sentiment=macro_prf(preds_s, golds_s, vocab.n_sentiments),
            act=macro_prf(preds_a, golds_a, vocab.n_acts),
        )
    if vocab.neutral_sentiment is None:
        raise ConfigError("'ignore-neutral-weighted' needs a neutral sentiment in the label vocabulary")
    return ignore_neutral_weighted_metrics(
        preds_s, golds_s, preds_a, golds_a,
        vocab.neutral_sentiment, vocab.n_sentiments, vocab.n_acts,
    )


# --- optimization ---

class Adam:
    """Standard Adam with bias correction over a model's parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params.values())
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            m_hat = self.m[i] / (1 - self.beta1 ** self.t)
            v_hat = self.v[i] / (1 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def clip_gradient_norm(params, max_norm: float) -> float:
    """Scale all grads so their global L2 norm is at most max_norm; returns the
    pre-clip norm."""
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in tensors)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for p in tensors:
            p.grad *= scale
    return total


# --- training loop ---

@dataclass
class TrainResult:
    best_params: dict[str, np.ndarray]
    best_epoch: int          # 0 = initial parameters
    best_metric: float
    log: list[dict]


class DivergenceError(RuntimeError):
    """Loss went non-finite; carries the last-good state."""

    def __init__(self, message: str, result: TrainResult):
        super().__init__(message)
        self.result = result


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def train(model: DarerModel, train_dialogs: list[Dialog], valid_dialogs: list[Dialog],
          config: TrainConfig) -> TrainResult:
    """Seeded epochs of shuffled mini-batches; keeps the parameters of the
    epoch with the best validation avg-F1 (ties go to the earliest epoch)."""
    config.validate()
    if not train_dialogs or not valid_dialogs:
        raise ValueError("training and validation corpora must be non-empty")
    validate_corpus(train_dialogs, model.label_vocab, model.config.n_speakers)
    validate_corpus(valid_dialogs, model.label_vocab, model.config.n_speakers)

    shuffle_rng = np.random.default_rng(config.seed)
    model.reseed_dropout(config.seed + 1)
    optimizer = Adam(model.parameters(), lr=config.lr)

    best_params = model.parameter_arrays()
    best_epoch, best_metric = 0, -1.0
    log_records: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_dialogs))
        sums = dict.fromkeys(LOG_KEYS[1:8], 0.0)
        n_batches = 0
        model.training = True
        for batch in _batches(order, config.batch_size):
            with ad.Tape():
                loss, report = model.batch_loss([train_dialogs[idx] for idx in batch])
                log.debug("%s", report.to_line())
                agg = {
                    "loss_total": report.grand_total,
                    "loss_estimate_S": sum(report.sentiment.estimate),
                    "loss_margin_S": sum(report.sentiment.margin),
                    "loss_pred_S": report.sentiment.prediction,
                    "loss_estimate_A": sum(report.act.estimate),
                    "loss_margin_A": sum(report.act.margin),
                    "loss_pred_A": report.act.prediction,
                }
                total = ad.mul(loss, 1.0 / len(batch))
                if not np.isfinite(total.data):
                    raise DivergenceError(
                        f"loss diverged at epoch {epoch}",
                        TrainResult(best_params, best_epoch, best_metric, log_records),
                    )
                ad.backward(total)
            clip_gradient_norm(model.parameters(), config.clip_norm)
            optimizer.step()
            optimizer.zero_grad()
            for key in sums:
                sums[key] += agg[key] / len(batch)
            n_batches += 1
        model.training = False

        metrics = evaluate(model, valid_dialogs, config.eval_convention)
        record = {"epoch": epoch}
        record.update({key: sums[key] / n_batches for key in sums})
        record["valid_f1_S"] = metrics.sentiment.f1
        record["valid_f1_A"] = metrics.act.f1
        log_records.append(record)
        log.info(
            "epoch %d: loss=%.4f valid_f1_S=%.4f valid_f1_A=%.4f",
            epoch, record["loss_total"], metrics.sentiment.f1, metrics.act.f1,
        )

        if metrics.avg_f1 > best_metric:
            best_metric = metrics.avg_f1
            best_epoch = epoch
            best_params = model.parameter_arrays()

    model.set_parameters(best_params)
    return TrainResult(best_params, best_epoch, best_metric, log_records)


def write_log(path, records: list[dict]) -> None:
    """Line-delimited JSON with a fixed key order, so identical runs produce
    identical bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({key: record[key] for key in LOG_KEYS}) + "\n")
