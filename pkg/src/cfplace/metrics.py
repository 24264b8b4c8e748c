"""Monte Carlo rate evaluation of AP placements."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelParams,
    DegenerateChannelError,
    db_to_linear,
    draw_shadowing,
    draw_small_scale,
    large_scale_coeff,
    zf_inverse_diag,
)
from .scenario import UserDensity, sample_users

MAX_REDRAWS = 3
STDERR_BATCHES = 20
FLOAT_FMT = "{:.9g}"


def rate_percentile(samples, q) -> float:
    """Empirical ``q``-quantile with linear interpolation between order statistics."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no samples")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    return float(np.quantile(x, q, method="linear"))


def improvement_ratio(new, base):
    """Relative change of ``new`` over ``base`` in percent."""
    base = np.asarray(base, dtype=float)
    if np.any(base <= 0):
        raise ValueError("baseline metric must be positive")
    out = 100.0 * (np.asarray(new, dtype=float) - base) / base
    return float(out) if out.ndim == 0 else out


@dataclass
class RateReport:
    powers_db: np.ndarray
    sum_rate: np.ndarray
    likely95_rate: np.ndarray
    stderr_sum: np.ndarray
    stderr_95: np.ndarray
    mc_iterations: int
    seed: int
    likely95_mode: str = "pooled"
    rates: np.ndarray | None = field(default=None, repr=False)  # (T, K, R) bits/s/Hz

    def at(self, power_db) -> dict:
        i = int(np.flatnonzero(np.isclose(self.powers_db, power_db))[0])
        return {"sum_rate": float(self.sum_rate[i]), "likely95_rate": float(self.likely95_rate[i])}

    def to_dict(self, include_samples=False) -> dict:
        d = {
            "mc_iterations": int(self.mc_iterations),
            "seed": int(self.seed),
            "likely95_mode": self.likely95_mode,
            "rho_r_db": [float(x) for x in self.powers_db],
            "sum_rate": [float(x) for x in self.sum_rate],
            "likely95_rate": [float(x) for x in self.likely95_rate],
            "stderr_sum": [float(x) for x in self.stderr_sum],
            "stderr_95": [float(x) for x in self.stderr_95],
        }
        if include_samples and self.rates is not None:
            d["per_user_rates"] = self.rates.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateReport":
        rates = d.get("per_user_rates")
        return cls(
            np.asarray(d["rho_r_db"], dtype=float),
            np.asarray(d["sum_rate"], dtype=float),
            np.asarray(d["likely95_rate"], dtype=float),
            np.asarray(d.get("stderr_sum", np.zeros(len(d["rho_r_db"]))), dtype=float),
            np.asarray(d.get("stderr_95", np.zeros(len(d["rho_r_db"]))), dtype=float),
            int(d.get("mc_iterations", 0)),
            int(d.get("seed", 0)),
            d.get("likely95_mode", "pooled"),
            None if rates is None else np.asarray(rates, dtype=float),
        )

    def to_json(self, include_samples=False) -> str:
        return json.dumps(self.to_dict(include_samples), indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho_r_db", "sum_rate", "likely95_rate", "stderr_sum", "stderr_95"])
        for row in zip(self.powers_db, self.sum_rate, self.likely95_rate, self.stderr_sum, self.stderr_95):
            w.writerow([FLOAT_FMT.format(float(v)) for v in row])
        return buf.getvalue()


def canonical_order(placement) -> np.ndarray:
    """APs sorted lexicographically by (x, y), so AP indexing cannot change results."""
    q = np.asarray(placement, dtype=float)
    return q[np.lexsort((q[:, 1], q[:, 0]))]


def _inverse_diag_with_redraw(betas, rng):
    """Diagonal of (G^H G)^{-1} for a batch (T, M, K); degenerate trials are redrawn."""
    g = np.sqrt(betas) * draw_small_scale(betas.shape, rng)
    diag = np.empty(betas.shape[::2])
    for t in range(len(g)):
        for attempt in range(MAX_REDRAWS + 1):
            try:
                diag[t] = zf_inverse_diag(g[t])
                break
            except DegenerateChannelError:
                if attempt == MAX_REDRAWS:
                    raise
                g[t] = np.sqrt(betas[t]) * draw_small_scale(betas[t].shape, rng)
    return diag


def _fast_inverse_diag(betas, rng):
    g = np.sqrt(betas) * draw_small_scale(betas.shape, rng)
    try:
        return zf_inverse_diag(g)
    except DegenerateChannelError:
        return None


def simulate_inverse_diag(placement, density: UserDensity, params: ChannelParams, K, mc_iters,
                          rng, fading_per_drop=1):
    """Per-trial ``[(G^H G)^{-1}]_kk`` with user drops resampled every trial.

    Returns an array (T, K) (or (T, F, K) with ``fading_per_drop = F > 1``).
    """
    q = canonical_order(placement)
    if len(q) < K:
        raise ValueError(f"zero forcing needs M >= K (M={len(q)}, K={K})")
    users = sample_users(density, mc_iters * K, rng=rng).reshape(mc_iters, K, 2)
    betas = large_scale_coeff(q[None, :, None, :], users[:, None, :, :], params)  # (T, M, K)
    betas = betas * draw_shadowing(betas.shape, params, rng)
    if fading_per_drop > 1:
        betas = np.repeat(betas[:, None], fading_per_drop, axis=1).reshape(-1, *betas.shape[1:])
    # fast path uses a child stream so a rare redraw keeps results seeded and stable
    fading_rng = np.random.default_rng(rng.integers(2**63))
    state = fading_rng.bit_generator.state
    diag = _fast_inverse_diag(betas, fading_rng)
    if diag is None:
        fading_rng.bit_generator.state = state
        diag = _inverse_diag_with_redraw(betas, fading_rng)
    if fading_per_drop > 1:
        diag = diag.reshape(mc_iters, fading_per_drop, K)
    return diag


def _batch_stderr(values_fn, n, batches=STDERR_BATCHES):
    edges = np.linspace(0, n, min(batches, n) + 1).astype(int)
    vals = np.array([values_fn(slice(a, b)) for a, b in zip(edges[:-1], edges[1:]) if b > a])
    if len(vals) < 2:
        return 0.0
    return float(vals.std(ddof=1) / np.sqrt(len(vals)))


def evaluate_placement(placement, density: UserDensity, params: ChannelParams, K, powers_db,
                       mc_iters, seed, *, likely95_mode="pooled", fading_per_drop=16,
                       keep_samples=True) -> RateReport:
    """Sum rate and 95%-likely rate versus transmit power.

    Every trial drops ``K`` users from ``density`` and draws an M x K fading
    matrix; per-user zero-forcing rates ``log2(1 + psi_k)`` are pooled over
    trials. ``likely95_mode="per_user"`` instead averages each drop's rate
    over ``fading_per_drop`` fading draws before taking the 5th percentile.
    """
    if likely95_mode not in ("pooled", "per_user"):
        raise ValueError(f"unknown likely95_mode {likely95_mode!r}")
    powers_db = np.asarray(powers_db, dtype=float)
    rho = db_to_linear(powers_db)
    rng = np.random.default_rng(seed)
    F = 1 if likely95_mode == "pooled" else fading_per_drop
    diag = simulate_inverse_diag(placement, density, params, K, mc_iters, rng, F)
    rates = np.log2(1.0 + rho / diag[..., None])  # (T, K, R) or (T, F, K, R)
    if F > 1:
        tail_samples = rates.mean(axis=1)
        rates = rates.reshape(-1, K, len(rho))
        trial_rates = tail_samples
    else:
        tail_samples = rates
        trial_rates = rates
    per_trial_sum = trial_rates.sum(axis=1)  # (T, R)
    sum_rate = per_trial_sum.mean(axis=0)
    likely = np.array([rate_percentile(tail_samples[:, :, r], 0.05) for r in range(len(rho))])
    T = len(per_trial_sum)
    se_sum = per_trial_sum.std(axis=0, ddof=1) / np.sqrt(T) if T > 1 else np.zeros(len(rho))
    se_95 = np.array([
        _batch_stderr(lambda s, r=r: rate_percentile(tail_samples[s, :, r], 0.05), T)
        for r in range(len(rho))
    ])
    return RateReport(powers_db, sum_rate, likely, se_sum, se_95, int(mc_iters), int(seed),
                      likely95_mode, trial_rates if keep_samples else None)


def compare_reports(new: RateReport, base: RateReport) -> list[dict]:
    """Per-power improvement ratios of ``new`` over ``base``."""
    if not np.allclose(new.powers_db, base.powers_db):
        raise ValueError("reports cover different power grids")
    rows = []
    for i, p in enumerate(base.powers_db):
        rows.append({
            "rho_r_db": float(p),
            "sum_rate_improvement_pct": improvement_ratio(new.sum_rate[i], base.sum_rate[i]),
            "likely95_improvement_pct": improvement_ratio(new.likely95_rate[i], base.likely95_rate[i]),
        })
    return rows


def asymptotic_rates(placement, users, params: ChannelParams, rho_r) -> np.ndarray:
    """Per-user ``log2(1 + rho_r * sum_m beta_mk)`` without small-scale fading."""
    q = np.asarray(placement, dtype=float)
    u = np.asarray(users, dtype=float)
    psi = rho_r * large_scale_coeff(u[:, None, :], q[None, :, :], params).sum(axis=1)
    return np.log2(1.0 + psi)
