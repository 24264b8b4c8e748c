"""Large-scale fading, Rayleigh small-scale draws and zero-forcing SNR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateChannelError(np.linalg.LinAlgError):
    """The channel Gram matrix is numerically singular."""


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Pathloss ``beta = c * z / (d**gamma + epsilon)``.

    ``epsilon`` is in m**gamma and keeps ``beta`` finite at zero distance.
    ``shadowing_sigma_db`` of ``None`` (or 0) disables log-normal shadowing.
    """

    constant_c: float = 1.0
    gamma: float = 3.5
    epsilon: float = 1.0
    shadowing_sigma_db: float | None = None
    rho_r_db: float = 30.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not self.constant_c > 0:
            raise ValueError("constant_c must be > 0")
        if self.shadowing_sigma_db is not None and self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")

    @property
    def rho_r(self) -> float:
        return float(db_to_linear(self.rho_r_db))

    @property
    def shadowing(self) -> bool:
        return bool(self.shadowing_sigma_db)


def large_scale_coeff(p, q, params: ChannelParams, z=1.0):
    """beta between user ``p`` and AP ``q``; broadcasts over leading axes."""
    d2 = np.sum((np.asarray(p, dtype=float) - np.asarray(q, dtype=float)) ** 2, axis=-1)
    return params.constant_c * z / (d2 ** (params.gamma / 2.0) + params.epsilon)


def large_scale_matrix(users, aps, params: ChannelParams) -> np.ndarray:
    """M x K matrix of beta (no shadowing) for ``aps`` (M, 2) and ``users`` (K, 2)."""
    aps = np.asarray(aps, dtype=float)
    users = np.asarray(users, dtype=float)
    return large_scale_coeff(aps[:, None, :], users[None, :, :], params)


def draw_shadowing(shape, params: ChannelParams, rng) -> np.ndarray:
    if not params.shadowing:
        return np.ones(shape)
    return 10.0 ** (params.shadowing_sigma_db * rng.standard_normal(shape) / 10.0)


def draw_small_scale(shape, rng) -> np.ndarray:
    """i.i.d. CN(0, 1): real and imaginary parts each have variance 1/2."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


@dataclass(frozen=True)
class ChannelMatrix:
    entries: np.ndarray  # (..., M, K) complex g_mk
    betas: np.ndarray  # (..., M, K) real beta_mk


def draw_channel(users, placement, params: ChannelParams, rng) -> ChannelMatrix:
    """One fading realization ``g_mk = sqrt(beta_mk) h_mk`` for all AP/user pairs."""
    betas = large_scale_matrix(users, placement, params)
    betas = betas * draw_shadowing(betas.shape, params, rng)
    h = draw_small_scale(betas.shape, rng)
    return ChannelMatrix(np.sqrt(betas) * h, betas)


def zf_inverse_diag(g: np.ndarray) -> np.ndarray:
    """Diagonal of (G^H G)^{-1}, batched over leading axes of ``g`` (..., M, K)."""
    gram = np.swapaxes(g.conj(), -1, -2) @ g
    # equilibrate so path-loss disparity between users does not hurt accuracy
    d = np.real(np.diagonal(gram, axis1=-2, axis2=-1))
    if np.any(d <= 0):
        raise DegenerateChannelError("zero channel column")
    s = 1.0 / np.sqrt(d)
    corr = gram * s[..., :, None] * s[..., None, :]
    cond = np.linalg.cond(corr)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise DegenerateChannelError("channel Gram matrix is numerically singular")
    inv = np.linalg.inv(corr)
    return np.real(np.diagonal(inv, axis1=-2, axis2=-1)) / d


def zf_snr(G, rho_r: float) -> np.ndarray:
    """Per-user zero-forcing SNR ``rho_r / [(G^H G)^{-1}]_kk``.

    ``G`` may be a :class:`ChannelMatrix` or a complex array of shape
    (..., M, K) with M >= K.
    """
    g = G.entries if isinstance(G, ChannelMatrix) else np.asarray(G)
    if g.shape[-2] < g.shape[-1]:
        raise ValueError(f"zero forcing needs M >= K, got M={g.shape[-2]}, K={g.shape[-1]}")
    return rho_r / zf_inverse_diag(g)


def asymptotic_snr(user, placement, params: ChannelParams, rho_r: float):
    """Large-array SNR approximation ``rho_r * sum_m beta_mk``.

    ``user`` may be a single point (2,) or a batch (K, 2).
    """
    aps = np.asarray(placement, dtype=float)
    u = np.asarray(user, dtype=float)
    betas = large_scale_coeff(u[..., None, :], aps, params)
    return rho_r * betas.sum(axis=-1)
