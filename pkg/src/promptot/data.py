from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, LabelOutOfRange, NonFiniteValue, ZeroRow
from .tensor_core import ZERO_ROW_TOL


@dataclass(frozen=True, eq=False)
class EmbeddingDataset:
    """Frozen image embeddings with observed (possibly noisy) labels.

    global_features: (D, d); local_features: (D, L, d); labels, truth: (D,) ints.
    ``truth`` is only ever read by evaluation code.
    """

    global_features: np.ndarray
    local_features: np.ndarray
    labels: np.ndarray
    num_classes: int
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        g = np.asarray(self.global_features, dtype=np.float64)
        loc = np.asarray(self.local_features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if g.ndim != 2 or loc.ndim != 3:
            raise DimensionMismatch(f"bad feature ranks: global {g.shape}, local {loc.shape}")
        D, d = g.shape
        if loc.shape[0] != D or loc.shape[2] != d:
            raise DimensionMismatch(f"local features {loc.shape} do not match global {g.shape}")
        if D and loc.shape[1] < 1:
            raise DimensionMismatch("need at least one patch per sample")
        if y.shape != (D,):
            raise DimensionMismatch(f"labels shape {y.shape}, expected ({D},)")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(loc))):
            raise NonFiniteValue("features contain NaN or Inf")
        if D:
            if np.any(np.linalg.norm(g, axis=1) <= ZERO_ROW_TOL) or np.any(
                np.linalg.norm(loc, axis=2) <= ZERO_ROW_TOL
            ):
                raise ZeroRow("feature rows must be normalizable")
        _check_labels(y, self.num_classes, "labels")
        truth = None
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=np.int64)
            if truth.shape != (D,):
                raise DimensionMismatch(f"truth shape {truth.shape}, expected ({D},)")
            _check_labels(truth, self.num_classes, "truth")
        for name, val in (("global_features", g), ("local_features", loc),
                          ("labels", y), ("truth", truth)):
            if val is not None:
                val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.global_features.shape[1]

    @property
    def patches(self) -> int:
        return self.local_features.shape[1]

    def with_labels(self, labels) -> "EmbeddingDataset":
        return replace(self, labels=np.array(labels, dtype=np.int64))

    def subset(self, idx) -> "EmbeddingDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return EmbeddingDataset(
            self.global_features[idx],
            self.local_features[idx],
            self.labels[idx],
            self.num_classes,
            None if self.truth is None else self.truth[idx],
        )


def _check_labels(y: np.ndarray, num_classes: int, what: str) -> None:
    if num_classes < 1:
        raise LabelOutOfRange(f"num_classes must be >= 1, got {num_classes}")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise LabelOutOfRange(f"{what} outside [0, {num_classes})")
