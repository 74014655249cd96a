"""Entropic optimal-transport solvers.

Two solvers share the scaling-vector formulation ``T = diag(u) K diag(v)``:

* :func:`sinkhorn_ot` for balanced (classical) OT,
* :func:`dykstra_uot` for the partial problem where row sums are only capped
  (``T 1 <= mu``) and the columns must carry exactly ``nu``.

Both stop when the L1 change of the column scaling vector drops below a
threshold, and both return the current plan flagged ``converged=False`` when
the iteration budget runs out.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NumericalUnderflow,
    TooLarge,
    UnbalancedMarginals,
    ValidationError,
)
from .tensor_core import as_matrix, as_vector

UNDERFLOW_TOL = 1e-300
DEFAULT_MAX_ITER = 100
DEFAULT_DELTA = 1e-3


@dataclass(frozen=True)
class TransportProblem:
    cost: np.ndarray
    mu: np.ndarray
    nu: np.ndarray
    epsilon: float

    def __post_init__(self):
        cost = as_matrix(self.cost, "cost")
        mu = as_vector(self.mu, "mu")
        nu = as_vector(self.nu, "nu")
        if cost.shape != (mu.size, nu.size):
            raise DimensionMismatch(
                f"cost shape {cost.shape} does not match marginals ({mu.size}, {nu.size})"
            )
        if np.any(mu <= 0) or np.any(nu <= 0):
            raise ValidationError("marginals must be strictly positive")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "epsilon", float(self.epsilon))


@dataclass(frozen=True)
class TransportPlan:
    plan: np.ndarray
    objective: float
    iterations: int
    converged: bool


def entropic_objective(cost, plan, epsilon: float) -> float:
    """<C, T> + epsilon * <T, log T>, using 0 log 0 = 0."""
    cost = as_matrix(cost, "cost")
    plan = as_matrix(plan, "plan")
    if cost.shape != plan.shape:
        raise DimensionMismatch(f"cost {cost.shape} vs plan {plan.shape}")
    if np.any(plan < 0):
        raise ValidationError("plan has negative entries")
    pos = plan > 0
    ent = np.sum(plan[pos] * np.log(plan[pos]))
    return float(np.sum(cost * plan) + epsilon * ent)


def sinkhorn_ot(
    problem: TransportProblem,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_DELTA,
) -> TransportPlan:
    """Balanced entropic OT by alternating row/column scaling."""
    C, mu, nu, eps = problem.cost, problem.mu, problem.nu, problem.epsilon
    if abs(mu.sum() - nu.sum()) > 1e-9:
        raise UnbalancedMarginals(f"|mu|={mu.sum()!r} != |nu|={nu.sum()!r}")

    # Row/column min shifts leave the balanced plan unchanged (they are absorbed
    # into u and v) and guarantee a unit entry in every row and column of K.
    reduced = C - C.min(axis=1, keepdims=True)
    reduced = reduced - reduced.min(axis=0, keepdims=True)
    K = np.exp(-reduced / eps)

    u = np.ones_like(mu)
    v = np.ones_like(nu)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Kv = K @ v
        if np.any(Kv < UNDERFLOW_TOL):
            raise NumericalUnderflow(f"row scaling denominator underflowed at iteration {it}")
        u = mu / Kv
        Ktu = K.T @ u
        if np.any(Ktu < UNDERFLOW_TOL):
            raise NumericalUnderflow(f"column scaling denominator underflowed at iteration {it}")
        v_new = nu / Ktu
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v_new))):
            raise NumericalUnderflow(f"scaling vectors left float64 range at iteration {it}")
        change = np.abs(v_new - v).sum()
        v = v_new
        if change < tol:
            converged = True
            break

    T = u[:, None] * K * v[None, :]
    return TransportPlan(T, float(np.sum(C * T)), it, converged)


def dykstra_uot(
    problem: TransportProblem,
    max_iter: int = DEFAULT_MAX_ITER,
    delta: float = DEFAULT_DELTA,
) -> TransportPlan:
    """Entropic OT with capped rows (``T 1 <= mu``) and exact columns (``T^T 1 = nu``)."""
    if problem.mu.sum() < problem.nu.sum() - 1e-12:
        raise ValidationError("partial transport needs |mu| >= |nu|")
    plans, iters, conv = dykstra_uot_batch(
        problem.cost[None], problem.mu[None], problem.nu[None], problem.epsilon, max_iter, delta
    )
    T = plans[0]
    return TransportPlan(T, float(np.sum(problem.cost * T)), int(iters[0]), bool(conv[0]))


def dykstra_uot_batch(cost, mu, nu, epsilon: float, max_iter: int = DEFAULT_MAX_ITER,
                      delta: float = DEFAULT_DELTA):
    """Solve a stack of P independent capped-row problems of shape (L, N).

    ``mu`` and ``nu`` may be shared 1-D marginals or per-problem (P, L) / (P, N)
    arrays.  Each problem stops on its own criterion and is frozen afterwards, so
    results match solving the problems one at a time.

    Returns ``(plans, iterations, converged)`` with shapes (P, L, N), (P,), (P,).
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 3:
        raise DimensionMismatch(f"expected (P, L, N) cost stack, got {cost.shape}")
    P, L, N = cost.shape
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (P, L))
    nu = np.broadcast_to(np.asarray(nu, dtype=np.float64), (P, N))

    Q = np.exp(-cost / epsilon)
    if np.any(Q.max(axis=1) < UNDERFLOW_TOL):
        raise NumericalUnderflow("a kernel column underflowed to zero; increase epsilon")
    Q_mu = Q / mu[:, :, None]
    Q_nu = Q / nu[:, None, :]

    u = np.ones((P, L))
    v = np.ones((P, N))
    iters = np.zeros(P, dtype=np.int64)
    converged = np.zeros(P, dtype=bool)
    active = np.arange(P)
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        Qa_mu, Qa_nu, va = Q_mu[active], Q_nu[active], v[active]
        with np.errstate(divide="ignore"):
            # A row whose kernel underflows carries no mass; the cap sets its scale to 1.
            ua = np.minimum(1.0 / np.einsum("pln,pn->pl", Qa_mu, va), 1.0)
        denom = np.einsum("pln,pl->pn", Qa_nu, ua)
        if np.any(denom < UNDERFLOW_TOL):
            raise NumericalUnderflow(f"column scaling denominator underflowed at iteration {it}")
        va_new = 1.0 / denom
        change = np.abs(va_new - va).sum(axis=1)
        u[active] = ua
        v[active] = va_new
        iters[active] = it
        done = change < delta
        converged[active[done]] = True
        active = active[~done]

    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NumericalUnderflow("scaling vectors left float64 range")
    plans = u[:, :, None] * Q * v[:, None, :]
    return plans, iters, converged


def exact_ot_oracle(cost) -> float:
    """Exact OT cost for uniform 1/n marginals on a square cost, by enumerating permutations.

    Only meant as a brute-force reference for small n.
    """
    C = as_matrix(cost, "cost")
    n = C.shape[0]
    if C.shape[1] != n:
        raise DimensionMismatch(f"cost must be square, got {C.shape}")
    if n > 7:
        raise TooLarge(f"n={n} exceeds the enumeration limit of 7")
    cols = range(n)
    best = math.inf
    for perm in itertools.permutations(cols):
        total = sum(C[i, perm[i]] for i in cols)
        if total < best:
            best = total
    return float(best / n)
