"""Two-phase prompt training: supervised warm phase, then selective label refinement."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .alignment import LOG_TAU_MAX, LOG_TAU_MIN, AlignmentConfig, PromptBank, align_batch, combined_scores
from .data import EmbeddingDataset
from .errors import MissingTruth, ShapeMismatch, ValidationError
from .objectives import GradientSet, batch_plans, loss_and_gradients
from .refinement import denoise, refinement_metrics

log = logging.getLogger(__name__)

TRAIN_STREAM = 10


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    sup_epochs: int = 20
    learning_rate: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    views: int = 4
    lambda_i: float = 0.1
    q: float = 0.5
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    seed: int = 0
    refine_every: Literal["epoch", "batch"] = "epoch"

    def __post_init__(self):
        if self.epochs < 0 or self.sup_epochs < 0 or self.sup_epochs > self.epochs:
            raise ValidationError("need 0 <= sup_epochs <= epochs")
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValidationError("learning_rate, momentum and weight_decay must be non-negative")
        if self.batch_size < 1 or self.views < 1:
            raise ValidationError("batch_size and views must be >= 1")
        if not 0 < self.q <= 1:
            raise ValidationError("q must lie in (0, 1]")
        if self.refine_every not in ("epoch", "batch"):
            raise ValidationError(f"refine_every must be 'epoch' or 'batch', got {self.refine_every!r}")


@dataclass
class SGDState:
    v_clean: np.ndarray
    v_noisy: np.ndarray
    v_log_tau: float = 0.0

    @classmethod
    def zeros_like(cls, bank: PromptBank) -> "SGDState":
        return cls(np.zeros_like(bank.clean), np.zeros_like(bank.noisy), 0.0)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)


def sgd_step(bank: PromptBank, grads: GradientSet, state: SGDState, cfg: TrainConfig):
    """Momentum SGD with L2 weight decay on the prompts (not on the temperature).

    Returns a new ``(bank, state)``; inputs are left untouched.
    """
    if grads.d_clean.shape != bank.clean.shape or grads.d_noisy.shape != bank.noisy.shape:
        raise ShapeMismatch("gradient shapes do not match the prompt bank")
    if state.v_clean.shape != bank.clean.shape or state.v_noisy.shape != bank.noisy.shape:
        raise ShapeMismatch("optimizer state shapes do not match the prompt bank")
    lr, m, wd = cfg.learning_rate, cfg.momentum, cfg.weight_decay
    v_c = m * state.v_clean + (grads.d_clean + wd * bank.clean)
    v_n = m * state.v_noisy + (grads.d_noisy + wd * bank.noisy)
    v_t = m * state.v_log_tau + grads.d_log_tau
    log_tau = float(np.clip(bank.log_tau - lr * v_t, LOG_TAU_MIN, LOG_TAU_MAX))
    new_bank = PromptBank(bank.clean - lr * v_c, bank.noisy - lr * v_n, log_tau)
    return new_bank, SGDState(v_c, v_n, float(v_t))


def evaluate(bank: PromptBank, test: EmbeddingDataset, cfg: AlignmentConfig = AlignmentConfig(),
             batch_size: int = 256) -> float:
    """Accuracy of the combined-score prediction against ground truth."""
    if test.truth is None or len(test) == 0:
        raise MissingTruth("evaluation needs a non-empty test set with ground-truth labels")
    return float(np.mean(predict_dataset(bank, test, cfg, batch_size) == test.truth))


def predict_dataset(bank: PromptBank, ds: EmbeddingDataset, cfg: AlignmentConfig = AlignmentConfig(),
                    batch_size: int = 256) -> np.ndarray:
    preds = np.zeros(len(ds), dtype=np.int64)
    for start in range(0, len(ds), batch_size):
        al = align_batch(ds.local_features[start:start + batch_size], bank, cfg)
        preds[start:start + batch_size] = np.argmax(combined_scores(al.p_clean, al.p_noisy), axis=1)
    return preds


def _refine_round(ds, bank, cfg):
    part, _, denoised = denoise(ds, bank, cfg.alignment, gated=True)
    report = refinement_metrics(ds.labels, denoised, ds.truth)
    return part, denoised, report


def train(ds: EmbeddingDataset, cfg: TrainConfig = TrainConfig(),
          bank: Optional[PromptBank] = None) -> tuple[PromptBank, TrainHistory]:
    """Train a prompt bank on ``ds`` following the delayed-refinement schedule.

    Epochs ``1..sup_epochs`` fit the observed labels with GCE + ITBP; later epochs
    rebuild the denoised label set (from the observed labels) and fit it with GCE
    alone.  Everything random is drawn from ``cfg.seed``.
    """
    if ds.num_classes < 2:
        raise ValidationError("training needs at least two classes")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(TRAIN_STREAM,)))
    if bank is None:
        bank = PromptBank.random(ds.num_classes, cfg.views, ds.dim, rng)
    elif bank.num_classes != ds.num_classes or bank.dim != ds.dim:
        raise ShapeMismatch("initial bank does not match the dataset")
    state = SGDState.zeros_like(bank)
    history = TrainHistory()
    D = len(ds)

    for epoch in range(1, cfg.epochs + 1):
        refining = epoch > cfg.sup_epochs
        labels = ds.labels
        report = part = None
        if refining and cfg.refine_every == "epoch":
            part, denoised, report = _refine_round(ds, bank, cfg)
            labels = denoised.labels

        totals = np.zeros(3)
        batches = 0
        unconverged = 0
        order = rng.permutation(D)
        for start in range(0, D, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if refining and cfg.refine_every == "batch":
                part, denoised, report = _refine_round(ds, bank, cfg)
                labels = denoised.labels
            feats = ds.local_features[idx]
            plans = batch_plans(feats, bank, cfg.alignment)
            unconverged += int(np.sum(~plans.converged))
            value, grads = loss_and_gradients(
                feats, labels[idx], bank, cfg.lambda_i, cfg.q,
                cfg.alignment, plans=plans, with_itbp=not refining,
            )
            bank, state = sgd_step(bank, grads, state, cfg)
            totals += (value.total, value.gce, value.itbp)
            batches += 1

        means = totals / max(batches, 1)
        record = {
            "epoch": epoch,
            "phase": "refine" if refining else "supervised",
            "loss_total": float(means[0]),
            "loss_gce": float(means[1]),
            "loss_itbp": float(means[2]),
            "tau": bank.tau,
        }
        if ds.truth is not None and D:
            record["noise_ratio"] = float(np.mean(labels != ds.truth))
        if part is not None:
            record["num_clean"] = int(part.clean_indices.size)
            record["num_noisy"] = int(part.noisy_indices.size)
            record["report"] = report.to_record()
        record["unconverged_solves"] = unconverged
        history.records.append(record)
        log.info("epoch %d %s loss=%.4f", epoch, record["phase"], record["loss_total"])

    return bank, history
