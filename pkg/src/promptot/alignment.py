"""Bi-directional multi-view prompt bank and patch-to-prompt alignment.

Each class owns N clean-oriented and N noise-aware prompt embeddings.  A sample's
local patches are matched to each prompt set by capped-row UOT; the transported
cost turns into a similarity ``s = 1 - <C, T>``.  Clean similarities feed a
softmax over classes, and each class's clean/noisy pair feeds a two-way softmax
that doubles as the per-class noise threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LabelOutOfRange, ValidationError
from .ot import TransportProblem, dykstra_uot, dykstra_uot_batch
from .tensor_core import (
    as_matrix,
    as_vector,
    cosine_similarity,
    l2_normalize_rows,
    pairwise_noisy_prob,
    tempered_softmax,
)

TAU_INIT = 0.07
LOG_TAU_MIN = math.log(1e-3)
LOG_TAU_MAX = math.log(10.0)
PROMPT_INIT_STD = 0.02


@dataclass(frozen=True)
class AlignmentConfig:
    epsilon: float = 0.1
    theta: float = 0.9
    max_iter: int = 100
    stop_delta: float = 1e-3

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.theta <= 1:
            raise ValidationError(f"theta must lie in (0, 1], got {self.theta}")
        if self.max_iter < 1:
            raise ValidationError("max_iter must be >= 1")


@dataclass
class PromptBank:
    """Learnable parameters: clean and noisy prompts, each (C, N, d), plus log-temperature."""

    clean: np.ndarray
    noisy: np.ndarray
    log_tau: float = math.log(TAU_INIT)

    def __post_init__(self):
        self.clean = np.array(self.clean, dtype=np.float64)
        self.noisy = np.array(self.noisy, dtype=np.float64)
        if self.clean.ndim != 3 or self.clean.shape != self.noisy.shape:
            raise DimensionMismatch(
                f"clean {self.clean.shape} and noisy {self.noisy.shape} must both be (C, N, d)"
            )
        # raises ZeroRow on degenerate prompts
        l2_normalize_rows(self.clean)
        l2_normalize_rows(self.noisy)
        self.log_tau = float(self.log_tau)

    @classmethod
    def random(cls, num_classes: int, views: int, dim: int, rng=None) -> "PromptBank":
        rng = np.random.default_rng(rng)
        shape = (num_classes, views, dim)
        clean = rng.normal(0.0, PROMPT_INIT_STD, size=shape)
        noisy = rng.normal(0.0, PROMPT_INIT_STD, size=shape)
        return cls(clean, noisy, math.log(TAU_INIT))

    @property
    def num_classes(self) -> int:
        return self.clean.shape[0]

    @property
    def views(self) -> int:
        return self.clean.shape[1]

    @property
    def dim(self) -> int:
        return self.clean.shape[2]

    @property
    def tau(self) -> float:
        return math.exp(self.log_tau)

    def copy(self) -> "PromptBank":
        return PromptBank(self.clean.copy(), self.noisy.copy(), self.log_tau)

    def class_features(self) -> np.ndarray:
        """Mean of each class's clean views, row-normalised: (C, d)."""
        return l2_normalize_rows(l2_normalize_rows(self.clean).mean(axis=1))


@dataclass(frozen=True)
class SampleFeatures:
    global_f: np.ndarray
    local_f: np.ndarray

    def __post_init__(self):
        g = as_vector(self.global_f, "global_f")
        loc = as_matrix(self.local_f, "local_f")
        if loc.shape[0] < 1 or loc.shape[1] != g.size:
            raise DimensionMismatch(f"local {loc.shape} vs global {g.shape}")
        object.__setattr__(self, "global_f", g)
        object.__setattr__(self, "local_f", loc)


@dataclass(frozen=True)
class AlignmentResult:
    s_clean: np.ndarray
    s_noisy: np.ndarray
    p_clean: np.ndarray
    p_noisy: np.ndarray
    phi: np.ndarray
    converged_all: bool


@dataclass
class BatchAlignment:
    """Alignment of B samples against all C classes; arrays are (B, C) unless noted."""

    s_clean: np.ndarray
    s_noisy: np.ndarray
    p_clean: np.ndarray
    p_noisy: np.ndarray
    cos_clean: np.ndarray  # (B, C, L, N)
    cos_noisy: np.ndarray
    plan_clean: np.ndarray  # (B, C, L, N)
    plan_noisy: np.ndarray
    converged: np.ndarray  # (B,) all 2C solves converged
    tau: float

    @property
    def phi(self) -> np.ndarray:
        return self.p_noisy

    def result(self, i: int) -> AlignmentResult:
        return AlignmentResult(
            self.s_clean[i].copy(),
            self.s_noisy[i].copy(),
            self.p_clean[i].copy(),
            self.p_noisy[i].copy(),
            self.p_noisy[i].copy(),
            bool(self.converged[i]),
        )


def marginals(patches: int, views: int, theta: float) -> tuple[np.ndarray, np.ndarray]:
    return np.full(patches, 1.0 / patches), np.full(views, theta / views)


def uot_distance(f: SampleFeatures, g, cfg: AlignmentConfig = AlignmentConfig()):
    """Partial-transport distance between a sample's patches and one prompt set (N x d).

    Returns ``(<C, T*>, plan)`` with ``C = 1 - cos(F, G)``.
    """
    g = as_matrix(g, "prompts")
    cost = 1.0 - cosine_similarity(f.local_f, g)
    mu, nu = marginals(cost.shape[0], cost.shape[1], cfg.theta)
    plan = dykstra_uot(TransportProblem(cost, mu, nu, cfg.epsilon), cfg.max_iter, cfg.stop_delta)
    return plan.objective, plan


def prompt_cosines(local_f, prompts) -> np.ndarray:
    """Cosines between patches (B, L, d) and prompt views (C, N, d): (B, C, L, N)."""
    fn = l2_normalize_rows(local_f)
    gn = l2_normalize_rows(prompts)
    return np.clip(np.einsum("bld,cnd->bcln", fn, gn), -1.0, 1.0)


def solve_plans(cos: np.ndarray, cfg: AlignmentConfig):
    """UOT plans for every (sample, class) cost ``1 - cos``; returns (plans, converged)."""
    B, C, L, N = cos.shape
    mu, nu = marginals(L, N, cfg.theta)
    plans, _, conv = dykstra_uot_batch(
        (1.0 - cos).reshape(B * C, L, N), mu, nu, cfg.epsilon, cfg.max_iter, cfg.stop_delta
    )
    return plans.reshape(B, C, L, N), conv.reshape(B, C)


def scores_from_plans(cos_c, cos_n, plan_c, plan_n, log_tau: float):
    """Similarities and probabilities given (possibly frozen) plans."""
    s_c = 1.0 - np.einsum("bcln,bcln->bc", 1.0 - cos_c, plan_c)
    s_n = 1.0 - np.einsum("bcln,bcln->bc", 1.0 - cos_n, plan_n)
    tau = math.exp(log_tau)
    p_c = tempered_softmax(s_c, tau, axis=1)
    p_n = pairwise_noisy_prob(s_c, s_n, tau)
    return s_c, s_n, p_c, p_n


def align_batch(local_f, bank: PromptBank, cfg: AlignmentConfig = AlignmentConfig()) -> BatchAlignment:
    local_f = np.asarray(local_f, dtype=np.float64)
    if local_f.ndim != 3 or local_f.shape[2] != bank.dim:
        raise DimensionMismatch(f"local features {local_f.shape} incompatible with bank dim {bank.dim}")
    cos_c = prompt_cosines(local_f, bank.clean)
    cos_n = prompt_cosines(local_f, bank.noisy)
    plan_c, conv_c = solve_plans(cos_c, cfg)
    plan_n, conv_n = solve_plans(cos_n, cfg)
    s_c, s_n, p_c, p_n = scores_from_plans(cos_c, cos_n, plan_c, plan_n, bank.log_tau)
    converged = conv_c.all(axis=1) & conv_n.all(axis=1)
    return BatchAlignment(s_c, s_n, p_c, p_n, cos_c, cos_n, plan_c, plan_n, converged, bank.tau)


def align_sample(f: SampleFeatures, bank: PromptBank,
                 cfg: AlignmentConfig = AlignmentConfig()) -> AlignmentResult:
    return align_batch(f.local_f[None], bank, cfg).result(0)


def is_clean(r: AlignmentResult, observed_label: int) -> bool:
    """Clean iff the clean-prompt confidence strictly exceeds the threshold for the observed class."""
    k = int(observed_label)
    if not 0 <= k < r.p_clean.size:
        raise LabelOutOfRange(f"label {k} outside [0, {r.p_clean.size})")
    return bool(r.p_clean[k] > r.phi[k])


def combined_scores(p_clean, p_noisy) -> np.ndarray:
    return (1.0 - np.asarray(p_noisy)) * np.asarray(p_clean)


def predict(r: AlignmentResult) -> int:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return int(np.argmax(combined_scores(r.p_clean, r.p_noisy)))
