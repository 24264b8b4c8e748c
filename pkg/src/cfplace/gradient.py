"""Gradient-ascent refinement of AP placements.

The objective is ``sum_k ln(1 + psi_k)`` with the large-array SNR
``psi_k = rho_r * sum_m c / (|p_k - q_m|**gamma + eps)``, summed either over
all training users (max-sum) or over the worst ``tail_fraction`` of them
(max-min). Natural log keeps the gradient free of ``1/ln 2`` factors.

:func:`ascend` divides both objectives by the number of training users (a
sample mean over the user density), which is the scale the default step
sizes are meant for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams


@dataclass(frozen=True)
class AscentConfig:
    step_delta: float
    rho_r: float
    max_iters: int = 500
    objective: str = "max_sum"
    tail_fraction: float = 0.05
    stall_window: int = 20
    stall_tol: float = 1e-8
    max_halvings: int = 5
    per_user: bool = True

    def __post_init__(self):
        if not self.step_delta > 0:
            raise ValueError("step_delta must be > 0")
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ValueError("tail_fraction must lie in (0, 1]")
        if self.objective not in ("max_sum", "max_min"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


def _geometry(placement, users, params):
    q = np.asarray(placement, dtype=float)
    p = np.asarray(users, dtype=float)
    diff = p[None, :, :] - q[:, None, :]  # (M, K, 2), p_k - q_m
    d2 = np.einsum("mki,mki->mk", diff, diff)
    dg = d2 ** (params.gamma / 2.0)
    return diff, d2, dg


def user_snr(placement, users, params: ChannelParams, rho_r) -> np.ndarray:
    _, _, dg = _geometry(placement, users, params)
    return rho_r * np.sum(params.constant_c / (dg + params.epsilon), axis=0)


def tail_set(psi, tail_fraction) -> np.ndarray:
    """Indices of the ``ceil(tail_fraction * K)`` users with the lowest SNR (stable order)."""
    n = max(1, math.ceil(tail_fraction * len(psi) - 1e-12))
    return np.sort(np.argsort(psi, kind="stable")[:n])


def _weighted_gradient(placement, users, params, rho_r, weights):
    diff, d2, dg = _geometry(placement, users, params)
    psi = rho_r * np.sum(params.constant_c / (dg + params.epsilon), axis=0)
    g = params.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        # d psi_k / d q_m = rho c gamma d^(gamma-2) (p_k - q_m) / (d^gamma + eps)^2
        radial = np.where(d2 > 0, d2 ** (g / 2.0 - 1.0), 0.0)
    coef = rho_r * params.constant_c * g * radial / (dg + params.epsilon) ** 2
    coef = coef * (weights / (1.0 + psi))[None, :]
    return np.einsum("mk,mki->mi", coef, diff)


def sum_rate_gradient(placement, users, params: ChannelParams, rho_r) -> np.ndarray:
    """d/dq_m of ``sum_k ln(1 + psi_k)``; shape (M, 2)."""
    return _weighted_gradient(placement, users, params, rho_r, np.ones(len(users)))


def tail_rate_gradient(placement, users, params: ChannelParams, rho_r, tail_fraction=0.05,
                       members=None) -> np.ndarray:
    """Gradient of the summed rate of the worst-served users.

    The tail set is recomputed from the current placement unless ``members``
    pins it.
    """
    if members is None:
        members = tail_set(user_snr(placement, users, params, rho_r), tail_fraction)
    w = np.zeros(len(users))
    w[np.asarray(members, dtype=int)] = 1.0
    return _weighted_gradient(placement, users, params, rho_r, w)


def objective_value(placement, users, params, rho_r, objective="max_sum", tail_fraction=0.05,
                    members=None) -> float:
    psi = user_snr(placement, users, params, rho_r)
    r = np.log1p(psi)
    if objective == "max_sum":
        return float(r.sum())
    if members is None:
        members = tail_set(psi, tail_fraction)
    return float(r[np.asarray(members, dtype=int)].sum())


@dataclass
class AscentResult:
    placement: np.ndarray
    best_objective: float
    trace: list[float] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    halvings: int = 0
    final_step: float = 0.0


def ascend(placement, users, params: ChannelParams, config: AscentConfig) -> AscentResult:
    """Fixed-step gradient ascent returning the best iterate seen.

    A drop of more than half the running maximum restarts from the best
    iterate with half the step (at most ``max_halvings`` times). The loop
    also ends when the objective moves less than ``stall_tol`` (relative)
    over ``stall_window`` iterations.
    """
    q = np.array(placement, dtype=float)
    users = np.asarray(users, dtype=float)

    scale = 1.0 / len(users) if config.per_user else 1.0

    def f(x):
        return scale * objective_value(x, users, params, config.rho_r, config.objective,
                                       config.tail_fraction)

    def grad(x):
        if config.objective == "max_sum":
            return scale * sum_rate_gradient(x, users, params, config.rho_r)
        return scale * tail_rate_gradient(x, users, params, config.rho_r, config.tail_fraction)

    cur = f(q)
    best_q, best = q.copy(), cur
    res = AscentResult(best_q, best, [cur], [best], 0, 0, config.step_delta)
    step = config.step_delta
    for it in range(1, config.max_iters + 1):
        q = q + step * grad(q)
        cur = f(q)
        res.iterations = it
        res.trace.append(cur)
        if cur > best:
            best, best_q = cur, q.copy()
        res.best_trace.append(best)
        if cur < best - 0.5 * abs(best):
            if res.halvings >= config.max_halvings:
                break
            res.halvings += 1
            step *= 0.5
            q = best_q.copy()
            continue
        w = config.stall_window
        if len(res.trace) > w:
            ref = res.trace[-1 - w]
            if abs(cur - ref) <= config.stall_tol * max(abs(cur), 1e-300):
                break
    res.placement = best_q
    res.best_objective = best
    res.final_step = step
    return res
