"""Training losses and their analytic gradients.

Gradients treat the UOT plans as constants of the current iterate: the plan
found for the current prompts is reused while differentiating ``<C(G), T>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .alignment import (
    AlignmentConfig,
    PromptBank,
    l2_normalize_rows,
    prompt_cosines,
    scores_from_plans,
    solve_plans,
)
from .errors import DimensionMismatch, DomainError, LabelOutOfRange, ValidationError

P_CLAMP = 1e-7


@dataclass(frozen=True)
class LossValue:
    total: float
    gce: float
    itbp: float


@dataclass(frozen=True)
class GradientSet:
    d_clean: np.ndarray
    d_noisy: np.ndarray
    d_log_tau: float


@dataclass(frozen=True)
class Plans:
    """Frozen UOT plans for a batch, each (B, C, L, N)."""

    clean: np.ndarray
    noisy: np.ndarray
    converged: Optional[np.ndarray] = None  # (B, 2C) solver flags, when known


def gce_loss(p_y, q: float = 0.5):
    """Generalized cross-entropy ``(1 - p_y**q) / q``; works elementwise on arrays."""
    if not 0 < q <= 1:
        raise DomainError(f"q must lie in (0, 1], got {q}")
    p = np.asarray(p_y, dtype=np.float64)
    if np.any(~(p > 0)) or np.any(p > 1):
        raise DomainError("p_y must lie in (0, 1]")
    out = (1.0 - p**q) / q
    return float(out) if out.ndim == 0 else out


def itbp_loss(batch_pn) -> float:
    """Bi-directional prompt loss over a B x B matrix of noisy-prompt probabilities.

    Entry (i, j) is the probability that image i matches the noise-aware prompt of
    sample j's labelled class.  The diagonal (an image against its own class's
    noisy prompt) should be rejected, off-diagonal pairs accepted.
    """
    pn = np.asarray(batch_pn, dtype=np.float64)
    if pn.ndim != 2 or pn.shape[0] != pn.shape[1] or pn.shape[0] < 1:
        raise DimensionMismatch(f"expected a non-empty square matrix, got {pn.shape}")
    if np.any(~(pn > 0)) or np.any(~(pn < 1)):
        raise DomainError("probabilities must lie strictly inside (0, 1)")
    B = pn.shape[0]
    diag = np.diag(pn)
    loss = -np.mean(np.log1p(-diag))
    if B > 1:
        off = ~np.eye(B, dtype=bool)
        loss -= np.sum(np.log(pn[off])) / (B * (B - 1))
    return float(loss)


def _check_batch(local_f, labels, bank: PromptBank):
    local_f = np.asarray(local_f, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if local_f.ndim != 3 or local_f.shape[2] != bank.dim:
        raise DimensionMismatch(f"local features {local_f.shape} incompatible with bank dim {bank.dim}")
    if labels.shape != (local_f.shape[0],):
        raise DimensionMismatch(f"labels {labels.shape} vs batch size {local_f.shape[0]}")
    if labels.size == 0:
        raise ValidationError("batch must be non-empty")
    if labels.min() < 0 or labels.max() >= bank.num_classes:
        raise LabelOutOfRange("batch label outside class range")
    return local_f, labels


def batch_plans(local_f, bank: PromptBank, cfg: AlignmentConfig = AlignmentConfig()) -> Plans:
    local_f = np.asarray(local_f, dtype=np.float64)
    plan_c, conv_c = solve_plans(prompt_cosines(local_f, bank.clean), cfg)
    plan_n, conv_n = solve_plans(prompt_cosines(local_f, bank.noisy), cfg)
    return Plans(plan_c, plan_n, np.concatenate([conv_c, conv_n], axis=1))


def _forward(local_f, labels, bank, lambda_i, q, cfg, plans, with_itbp, want_grad):
    cos_c = prompt_cosines(local_f, bank.clean)
    cos_n = prompt_cosines(local_f, bank.noisy)
    if plans is None:
        plan_c, _ = solve_plans(cos_c, cfg)
        plan_n, _ = solve_plans(cos_n, cfg)
    else:
        plan_c, plan_n = plans.clean, plans.noisy
        if plan_c.shape != cos_c.shape or plan_n.shape != cos_n.shape:
            raise DimensionMismatch("frozen plans do not match the batch")
    s_c, s_n, p_c, p_n = scores_from_plans(cos_c, cos_n, plan_c, plan_n, bank.log_tau)
    B = labels.size
    rows = np.arange(B)
    tau = bank.tau

    p_y = p_c[rows, labels]
    gce = float(np.mean(gce_loss(np.maximum(p_y, np.finfo(float).tiny), q)))

    itbp = 0.0
    if with_itbp:
        pn_pairs = p_n[:, labels]  # (i, j) -> image i vs noisy prompt of label y_j
        clamped = np.clip(pn_pairs, P_CLAMP, 1.0 - P_CLAMP)
        itbp = itbp_loss(clamped)
    total = gce + lambda_i * itbp
    value = LossValue(total, gce, itbp)
    if not want_grad:
        return value, None

    # dL/dz for the clean-class logits z = s_c / tau
    onehot = np.zeros_like(p_c)
    onehot[rows, labels] = 1.0
    dz_c = -(p_y**q)[:, None] * (onehot - p_c) / B
    dlog_tau = float(np.sum(dz_c * (-s_c / tau)))
    ds_c = dz_c / tau
    ds_n = np.zeros_like(s_n)

    if with_itbp and lambda_i != 0.0:
        # w_ij = (s_n - s_c)[i, y_j] / tau and p_n = sigmoid(w)
        inside = (pn_pairs > P_CLAMP) & (pn_pairs < 1.0 - P_CLAMP)
        dw = np.zeros((B, B))
        dw[rows, rows] = pn_pairs[rows, rows] / B
        if B > 1:
            off = ~np.eye(B, dtype=bool)
            dw[off] = -(1.0 - pn_pairs[off]) / (B * (B - 1))
        dw = lambda_i * dw * inside
        w = (s_n[:, labels] - s_c[:, labels]) / tau
        dlog_tau += float(np.sum(dw * (-w)))
        dw_class = np.zeros_like(s_n)
        np.add.at(dw_class, (slice(None), labels), dw)
        ds_n += dw_class / tau
        ds_c -= dw_class / tau

    d_clean = _prompt_grad(local_f, bank.clean, cos_c, plan_c, ds_c)
    d_noisy = _prompt_grad(local_f, bank.noisy, cos_n, plan_n, ds_n)
    return value, GradientSet(d_clean, d_noisy, dlog_tau)


def _prompt_grad(local_f, prompts, cos, plan, ds):
    """Chain ds (B, C) through s = 1 - <1 - cos, T> down to the raw prompt rows."""
    fn = l2_normalize_rows(local_f)
    norms = np.linalg.norm(prompts, axis=-1, keepdims=True)
    gn = prompts / norms
    weight = ds[:, :, None, None] * plan  # (B, C, L, N)
    toward = np.einsum("bkln,bld->knd", weight, fn)
    radial = np.einsum("bkln,bkln->kn", weight, cos)[:, :, None] * gn
    return (toward - radial) / norms


def supervised_loss(local_f, labels, bank: PromptBank, lambda_i: float = 0.1, q: float = 0.5,
                    cfg: AlignmentConfig = AlignmentConfig(), plans: Optional[Plans] = None,
                    with_itbp: bool = True) -> LossValue:
    """GCE over the clean-class softmax plus ``lambda_i`` times the ITBP loss.

    Pass ``plans`` to evaluate with frozen transport plans; ``with_itbp=False``
    gives the pure-GCE loss used after refinement starts.
    """
    local_f, labels = _check_batch(local_f, labels, bank)
    value, _ = _forward(local_f, labels, bank, lambda_i, q, cfg, plans, with_itbp, False)
    return value


def loss_and_gradients(local_f, labels, bank: PromptBank, lambda_i: float = 0.1, q: float = 0.5,
                       cfg: AlignmentConfig = AlignmentConfig(), plans: Optional[Plans] = None,
                       with_itbp: bool = True) -> tuple[LossValue, GradientSet]:
    local_f, labels = _check_batch(local_f, labels, bank)
    return _forward(local_f, labels, bank, lambda_i, q, cfg, plans, with_itbp, True)


def loss_gradients(local_f, labels, bank: PromptBank, lambda_i: float = 0.1, q: float = 0.5,
                   cfg: AlignmentConfig = AlignmentConfig(), plans: Optional[Plans] = None,
                   with_itbp: bool = True) -> GradientSet:
    """Gradient of :func:`supervised_loss` w.r.t. every prompt entry and the log-temperature."""
    return loss_and_gradients(local_f, labels, bank, lambda_i, q, cfg, plans, with_itbp)[1]

