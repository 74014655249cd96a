"""Independent reference solvers used only by the tests."""

from __future__ import annotations

import itertools

import numpy as np

GRID_STEP = 1e-3


def _entropic(cost, plan, eps):
    pos = plan > 0
    return float(np.sum(cost * plan) + eps * np.sum(plan[pos] * np.log(plan[pos])))


def grid_uot(cost, mu, nu, eps, step=GRID_STEP):
    """Brute-force minimum of <C,T> + eps <T, log T> over the capped-row polytope.

    Each column's last entry is fixed by its sum, so the search runs over the
    first L-1 entries of every column on a ``step`` lattice.  Only practical for
    at most two free coordinates.  Returns ``(plan, entropic value)``.
    """
    cost = np.asarray(cost, float)
    L, N = cost.shape
    free = [(i, j) for j in range(N) for i in range(L - 1)]
    if len(free) > 2:
        raise ValueError("grid oracle limited to two free coordinates")
    if not free:
        plan = np.broadcast_to(nu, (L, N)).astype(float).copy()
        return plan, _entropic(cost, plan, eps)
    axes = [np.arange(0.0, nu[j] + step / 2, step) for (_, j) in free]
    grids = np.meshgrid(*axes, indexing="ij")
    best_val, best_plan = np.inf, None
    T = np.zeros(grids[0].shape + (L, N))
    for (i, j), g in zip(free, grids):
        T[..., i, j] = g
    for j in range(N):
        T[..., L - 1, j] = nu[j] - T[..., : L - 1, j].sum(axis=-1)
    feasible = np.all(T >= -1e-15, axis=(-2, -1)) & np.all(T.sum(axis=-1) <= mu + 1e-12, axis=-1)
    T = np.clip(T, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(T > 0, T * np.log(T), 0.0).sum(axis=(-2, -1))
    vals = np.where(feasible, (cost * T).sum(axis=(-2, -1)) + eps * ent, np.inf)
    k = np.unravel_index(np.argmin(vals), vals.shape)
    best_val, best_plan = float(vals[k]), T[k]
    return best_plan, best_val


def convex_uot(cost, mu, nu, eps):
    """Same problem as :func:`grid_uot`, solved with an exponential-cone solver."""
    import cvxpy as cp

    cost = np.asarray(cost, float)
    T = cp.Variable(cost.shape, nonneg=True)
    objective = cp.Minimize(cp.sum(cp.multiply(cost, T)) - eps * cp.sum(cp.entr(T)))
    constraints = [cp.sum(T, axis=0) == nu, cp.sum(T, axis=1) <= mu]
    cp.Problem(objective, constraints).solve(solver=cp.CLARABEL)
    plan = np.clip(T.value, 0.0, None)
    return plan, _entropic(cost, plan, eps)


def reference_uot(cost, mu, nu, eps):
    """Grid search when it is tractable, the convex solver otherwise."""
    L, N = np.shape(cost)
    if N * (L - 1) <= 2:
        return grid_uot(cost, mu, nu, eps)
    return convex_uot(cost, mu, nu, eps)


def brute_force_balanced_assignment(cost, capacity):
    """Minimum-cost assignment of D samples to C classes, each class taking ``capacity`` samples.

    ``cost`` is (C, D).  Returns the per-sample class vector of the optimum.
    """
    C, D = cost.shape
    slots = np.repeat(np.arange(C), capacity)
    best, best_assign = np.inf, None
    for perm in set(itertools.permutations(slots)):
        assign = np.array(perm)
        total = cost[assign, np.arange(D)].sum()
        if total < best - 1e-12:
            best, best_assign = total, assign
    return best_assign


def finite_difference_gradients(loss_fn, bank, h=1e-5):
    """Central differences of ``loss_fn(bank) -> float`` over every prompt entry and log_tau."""
    from promptot.alignment import PromptBank

    grads = {}
    for side in ("clean", "noisy"):
        base = getattr(bank, side)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            vals = []
            for sign in (1.0, -1.0):
                arr = base.copy()
                arr[idx] += sign * h
                other = bank.noisy if side == "clean" else bank.clean
                pair = (arr, other) if side == "clean" else (other, arr)
                vals.append(loss_fn(PromptBank(*pair, bank.log_tau)))
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        grads[side] = g
    up = loss_fn(PromptBank(bank.clean, bank.noisy, bank.log_tau + h))
    down = loss_fn(PromptBank(bank.clean, bank.noisy, bank.log_tau - h))
    grads["log_tau"] = (up - down) / (2 * h)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    a = np.atleast_1d(np.asarray(analytic, float))
    f = np.atleast_1d(np.asarray(numeric, float))
    return float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)))
