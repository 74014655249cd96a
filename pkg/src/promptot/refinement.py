"""Noise identification, OT pseudo-labelling and selective relabelling."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .alignment import AlignmentConfig, PromptBank, align_batch
from .data import EmbeddingDataset
from .errors import DimensionMismatch, IndexMismatch, LengthMismatch, ValidationError
from .ot import TransportPlan, TransportProblem, sinkhorn_ot
from .tensor_core import as_matrix, l2_normalize_rows

SIM_FLOOR = 1e-6
PSEUDO_MAX_ITER = 1000
PSEUDO_TOL = 1e-9


@dataclass(frozen=True)
class DatasetPartition:
    clean_indices: np.ndarray
    noisy_indices: np.ndarray


@dataclass(frozen=True)
class DenoisedDataset:
    labels: np.ndarray
    refined_mask: np.ndarray


@dataclass(frozen=True)
class RefinementReport:
    num_refined: int
    num_clean_kept: int
    noise_ratio_before: Optional[float] = None
    noise_ratio_after: Optional[float] = None
    correct_correction_rate: Optional[float] = None

    def to_record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def clean_mask(ds: EmbeddingDataset, bank: PromptBank, cfg: AlignmentConfig = AlignmentConfig(),
               batch_size: int = 256) -> np.ndarray:
    """Per-sample flag: p_clean > phi at the observed label (strict)."""
    flags = np.zeros(len(ds), dtype=bool)
    for start in range(0, len(ds), batch_size):
        sl = slice(start, start + batch_size)
        al = align_batch(ds.local_features[sl], bank, cfg)
        y = ds.labels[sl]
        rows = np.arange(y.size)
        flags[sl] = al.p_clean[rows, y] > al.phi[rows, y]
    return flags


def partition_dataset(ds: EmbeddingDataset, bank: PromptBank,
                      cfg: AlignmentConfig = AlignmentConfig()) -> DatasetPartition:
    flags = clean_mask(ds, bank, cfg)
    return DatasetPartition(np.flatnonzero(flags), np.flatnonzero(~flags))


def global_ot_plan(global_features, class_features, epsilon: float = 0.1,
                   max_iter: int = PSEUDO_MAX_ITER, tol: float = PSEUDO_TOL) -> TransportPlan:
    """Classes-by-samples (C x D) balanced plan with uniform marginals on both sides.

    Cost is ``-log`` of the cosine mapped to [0, 1] via ``(1 + cos) / 2`` and
    floored at ``SIM_FLOOR``.
    """
    f = l2_normalize_rows(as_matrix(global_features, "global_features"))
    g = l2_normalize_rows(as_matrix(class_features, "class_features"))
    if f.shape[1] != g.shape[1]:
        raise DimensionMismatch(f"feature dims differ: {f.shape[1]} vs {g.shape[1]}")
    D, C = f.shape[0], g.shape[0]
    if D < 1 or C < 2:
        raise ValidationError("need at least one sample and two classes")
    sim = np.clip((1.0 + g @ f.T) / 2.0, SIM_FLOOR, 1.0)
    cost = -np.log(sim)
    problem = TransportProblem(cost, np.full(C, 1.0 / C), np.full(D, 1.0 / D), epsilon)
    return sinkhorn_ot(problem, max_iter, tol)


def global_ot_pseudolabels(ds: EmbeddingDataset, class_features, epsilon: float = 0.1,
                           max_iter: int = PSEUDO_MAX_ITER, tol: float = PSEUDO_TOL) -> np.ndarray:
    """Hard pseudo-label per sample: the class sending it the most transport mass."""
    plan = global_ot_plan(ds.global_features, class_features, epsilon, max_iter, tol)
    return np.argmax(plan.plan, axis=0).astype(np.int64)


def refine(ds: EmbeddingDataset, part: DatasetPartition, pseudo) -> DenoisedDataset:
    pseudo = np.asarray(pseudo, dtype=np.int64)
    D = len(ds)
    if pseudo.shape != (D,):
        raise IndexMismatch(f"pseudo-labels cover {pseudo.shape}, dataset has {D} samples")
    clean = np.asarray(part.clean_indices, dtype=np.int64)
    noisy = np.asarray(part.noisy_indices, dtype=np.int64)
    covered = np.zeros(D, dtype=np.int64)
    np.add.at(covered, clean, 1)
    np.add.at(covered, noisy, 1)
    if np.any(covered != 1):
        raise IndexMismatch("partition must cover every sample exactly once")
    labels = np.array(ds.labels, dtype=np.int64)
    labels[noisy] = pseudo[noisy]
    mask = np.zeros(D, dtype=bool)
    mask[noisy] = True
    return DenoisedDataset(labels, mask)


def refinement_metrics(before, after: DenoisedDataset, truth=None) -> RefinementReport:
    before = np.asarray(before, dtype=np.int64)
    if after.labels.shape != before.shape:
        raise LengthMismatch("before/after label counts differ")
    num_refined = int(after.refined_mask.sum())
    num_kept = int(before.size - num_refined)
    if truth is None:
        return RefinementReport(num_refined, num_kept)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != before.shape:
        raise LengthMismatch("truth length differs from labels")
    if before.size == 0:
        return RefinementReport(num_refined, num_kept)
    ratio_before = float(np.mean(before != truth))
    ratio_after = float(np.mean(after.labels != truth))
    wrong_refined = after.refined_mask & (before != truth)
    rate = None
    if wrong_refined.any():
        rate = float(np.mean(after.labels[wrong_refined] == truth[wrong_refined]))
    return RefinementReport(num_refined, num_kept, ratio_before, ratio_after, rate)


def denoise(ds: EmbeddingDataset, bank: PromptBank, cfg: AlignmentConfig = AlignmentConfig(),
            gated: bool = True):
    """One refinement round: partition, pseudo-label, relabel.

    ``gated=False`` relabels every sample with its pseudo-label (no threshold).
    Returns ``(partition, pseudo_labels, denoised)``.
    """
    if gated:
        part = partition_dataset(ds, bank, cfg)
    else:
        part = DatasetPartition(np.array([], dtype=np.int64), np.arange(len(ds)))
    if len(ds) == 0:
        pseudo = np.array([], dtype=np.int64)
    else:
        pseudo = global_ot_pseudolabels(ds, bank.class_features(), cfg.epsilon)
    return part, pseudo, refine(ds, part, pseudo)
