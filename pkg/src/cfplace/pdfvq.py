"""PDF-optimized VQ placement from a known Gaussian mixture.

Pipeline: per-cluster allocation of the total budget ``log2(M)``, per-axis
allocation in each cluster's eigenbasis, Lloyd-Max scalar quantizers along
each axis, and a Cartesian-product codebook mapped back to the plane.
Allocations are real-valued; :func:`budget_repair` picks integer level counts.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtr

CACHE_FORMAT = "cfplace-lloyd-max/1"

_STD_TABLE: dict[int, np.ndarray] = {}


@dataclass(frozen=True)
class ClusterSpectrum:
    eigvals: np.ndarray  # (2,), descending
    eigvecs: np.ndarray  # (2, 2), columns are eigenvectors

    @property
    def c(self) -> float:
        return float(np.sqrt(self.eigvals[0] * self.eigvals[1]))


def cluster_spectrum(cov) -> ClusterSpectrum:
    """Eigen-decomposition with a deterministic order and sign.

    Eigenvalues are sorted descending (stable, so equal eigenvalues keep the
    solver's order) and each eigenvector's first nonzero entry is positive.
    """
    w, v = np.linalg.eigh(np.asarray(cov, dtype=float))
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order].copy()
    for j in range(2):
        col = v[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-15)
        if col[nz[0]] < 0:
            v[:, j] = -col
    return ClusterSpectrum(w, v)


def cluster_allocation(density, M) -> np.ndarray:
    """Real-valued AP counts ``2**b_l`` per cluster; they sum to ``M``."""
    w = density.weights
    c = np.array([cluster_spectrum(comp.covariance).c for comp in density.components])
    share = np.sqrt(w * c)
    return M * share / share.sum()


def dimension_allocation(b_l, spectrum: ClusterSpectrum):
    """Split allocation ``b_l`` over the two eigen-axes.

    Returns ``(b_lj, levels)`` with ``b_lj = b_l/2 + log2(lambda_j / c_l)/2``
    and ``levels = 2**b_lj``.
    """
    b = b_l / 2.0 + 0.5 * np.log2(spectrum.eigvals / spectrum.c)
    return b, np.exp2(b)


# --- Lloyd-Max scalar quantizers ---------------------------------------------

def _phi(x):
    return np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


def _interval_means(bounds):
    a, b = bounds[:-1], bounds[1:]
    mass = ndtr(b) - ndtr(a)
    return (_phi(a) - _phi(b)) / mass


def _lloyd_max_standard(V, tol=1e-10, max_iter=1_000_000):
    if V == 1:
        return np.zeros(1)
    from scipy.special import ndtri

    y = ndtri((np.arange(V) + 0.5) / V)
    for _ in range(max_iter):
        bounds = np.concatenate(([-np.inf], 0.5 * (y[1:] + y[:-1]), [np.inf]))
        new = _interval_means(bounds)
        new = 0.5 * (new - new[::-1])  # keep exact mirror symmetry
        move = np.max(np.abs(new - y))
        y = new
        if move < tol:
            return y
    raise RuntimeError(f"Lloyd-Max did not converge for V={V}")


def lloyd_max_standard(V: int) -> np.ndarray:
    """Optimal ``V``-level quantizer codepoints for N(0, 1), memoized."""
    V = int(V)
    if V < 1:
        raise ValueError("V must be >= 1")
    if V not in _STD_TABLE:
        _STD_TABLE[V] = _lloyd_max_standard(V)
    return _STD_TABLE[V].copy()


@dataclass(frozen=True)
class ScalarCodebook:
    levels: int
    codepoints: np.ndarray


def lloyd_max_scalar(levels: int, variance: float) -> ScalarCodebook:
    """Lloyd-Max codebook for N(0, variance): the standard one scaled by its std."""
    if variance <= 0:
        raise ValueError("variance must be > 0")
    return ScalarCodebook(int(levels), lloyd_max_standard(levels) * math.sqrt(variance))


def fixed_point_residual(codepoints, variance=1.0) -> float:
    """Largest gap between a codepoint and the conditional mean of its cell."""
    s = math.sqrt(variance)
    y = np.asarray(codepoints, dtype=float) / s
    bounds = np.concatenate(([-np.inf], 0.5 * (y[1:] + y[:-1]), [np.inf]))
    return float(np.max(np.abs(_interval_means(bounds) - y)) * s)


def save_codebook_cache(path, max_levels=32):
    """Write standard-normal codebooks for 1..max_levels levels as JSON.

    Format: ``{"format": "cfplace-lloyd-max/1", "distribution": "N(0,1)",
    "codebooks": {"<V>": [y_1, ..., y_V], ...}}`` with ascending codepoints.
    """
    books = {str(v): lloyd_max_standard(v).tolist() for v in range(1, max_levels + 1)}
    doc = {"format": CACHE_FORMAT, "distribution": "N(0,1)", "codebooks": books}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_codebook_cache(path, max_levels=32) -> int:
    """Fill the in-memory table from ``path``; regenerate the file if it is missing or invalid.

    Returns the number of codebooks loaded from disk (0 after regeneration).
    """
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
        if doc.get("format") != CACHE_FORMAT:
            raise ValueError("format mismatch")
        books = {int(k): np.asarray(v, dtype=float) for k, v in doc["codebooks"].items()}
        for v, y in books.items():
            if y.shape != (v,) or np.any(np.diff(y) <= 0):
                raise ValueError(f"bad codebook for V={v}")
    except (OSError, ValueError, KeyError, TypeError):
        save_codebook_cache(p, max_levels)
        return 0
    _STD_TABLE.update(books)
    return len(books)


# --- allocation plan and codebook --------------------------------------------

@dataclass
class AllocationPlan:
    M: int
    cluster_levels: np.ndarray  # (L,) real 2**b_l
    dim_bits: np.ndarray  # (L, 2) real b_lj
    continuous_levels: np.ndarray  # (L, 2) real 2**b_lj
    spectra: tuple[ClusterSpectrum, ...]
    integer_levels: np.ndarray | None = None  # (L, 2) after repair

    @property
    def b_tot(self) -> float:
        return math.log2(self.M)

    @property
    def cluster_bits(self) -> np.ndarray:
        return np.log2(self.cluster_levels)

    @property
    def total_aps(self) -> int:
        if self.integer_levels is None:
            raise ValueError("plan has no integer levels yet")
        return int(np.prod(self.integer_levels, axis=1).sum())


def allocation_plan(density, M) -> AllocationPlan:
    spectra = tuple(cluster_spectrum(c.covariance) for c in density.components)
    cl = cluster_allocation(density, M)
    bits, levels = [], []
    for n_l, spec in zip(cl, spectra):
        b, v = dimension_allocation(math.log2(n_l), spec)
        bits.append(b)
        levels.append(v)
    return AllocationPlan(int(M), cl, np.array(bits), np.array(levels), spectra)


def assemble_codebook(density, levels, spectra=None) -> np.ndarray:
    """AP positions ``Q_l y + mu_l`` for ``y`` in each cluster's product codebook.

    ``levels`` is an (L, 2) integer array (or an :class:`AllocationPlan` with
    integer levels). Clusters are concatenated in mixture order.
    """
    if isinstance(levels, AllocationPlan):
        spectra = levels.spectra
        levels = levels.integer_levels
        if levels is None:
            raise ValueError("plan has no integer levels; run budget_repair first")
    if spectra is None:
        spectra = [cluster_spectrum(c.covariance) for c in density.components]
    out = []
    for comp, spec, (n1, n2) in zip(density.components, spectra, np.asarray(levels, dtype=int)):
        s1 = lloyd_max_scalar(n1, spec.eigvals[0]).codepoints
        s2 = lloyd_max_scalar(n2, spec.eigvals[1]).codepoints
        y = np.array(list(itertools.product(s1, s2)))
        out.append(y @ spec.eigvecs.T + comp.mean)
    return np.concatenate(out, axis=0)


@dataclass
class RepairResult:
    levels: np.ndarray  # (L, 2) int
    score: float
    candidates: list[tuple[tuple[int, ...], float]]


def _axis_range(v, window):
    lo = max(1, math.floor(v) - window)
    hi = max(1, math.ceil(v) + window)
    return range(lo, hi + 1)


def repair_candidates(continuous_levels, M, window=1, cluster_tolerance=0.25) -> list[np.ndarray]:
    """Integer (L, 2) level tables reachable from the continuous plan.

    Each axis ranges over ``floor(V) - window .. ceil(V) + window`` (at least
    1) and each cluster's AP count must stay within ``cluster_tolerance``
    (relative) of its continuous count, so the search rounds the plan rather
    than re-allocating it. Of the tables with at most ``M`` APs only the
    maximal ones are kept: no axis can take one more level without breaking
    a constraint. Adding APs never lowers rate.
    """
    cont = np.asarray(continuous_levels, dtype=float)
    L = len(cont)
    targets = np.prod(cont, axis=1)
    per_cluster = []
    for l in range(L):
        opts = {}
        for a in _axis_range(cont[l, 0], window):
            for b in _axis_range(cont[l, 1], window):
                n = a * b
                if abs(n - targets[l]) <= cluster_tolerance * targets[l] + 1e-9:
                    opts[(a, b)] = n
        if not opts:
            # nothing inside the tolerance: fall back to the closest count
            pairs = [(a, b) for a in _axis_range(cont[l, 0], window) for b in _axis_range(cont[l, 1], window)]
            best = min(abs(a * b - targets[l]) for a, b in pairs)
            opts = {(a, b): a * b for a, b in pairs if abs(a * b - targets[l]) == best}
        per_cluster.append(opts)
    found = []
    for combo in itertools.product(*[sorted(o) for o in per_cluster]):
        total = sum(per_cluster[l][combo[l]] for l in range(L))
        if total > M:
            continue
        maximal = True
        for l, (a, b) in enumerate(combo):
            for bumped in ((a + 1, b), (a, b + 1)):
                if bumped in per_cluster[l] and total - a * b + bumped[0] * bumped[1] <= M:
                    maximal = False
        if maximal:
            found.append(np.array(combo, dtype=int))
    return found


def budget_repair(plan: AllocationPlan, density, M, eval_hook, *, window=1,
                  cluster_tolerance=0.25) -> RepairResult:
    """Choose integer levels for ``plan`` by scoring candidate codebooks.

    ``eval_hook(placement)`` returns a score to maximize for the assembled
    candidate placement; ties go to the
    lexicographically smallest level table. A plan that is already integral
    with exactly ``M`` APs is returned without search.
    """
    cont = plan.continuous_levels
    rounded = np.rint(cont)
    if np.allclose(cont, rounded, rtol=0, atol=1e-9) and int(np.prod(rounded, axis=1).sum()) == M:
        lv = rounded.astype(int)
        plan.integer_levels = lv
        return RepairResult(lv, float("nan"), [(tuple(lv.ravel()), float("nan"))])
    cands = repair_candidates(cont, M, window, cluster_tolerance)
    if not cands:
        raise ValueError("no integer allocation fits the AP budget")
    scored = [(tuple(lv.ravel().tolist()), float(eval_hook(assemble_codebook(density, lv, plan.spectra)))) for lv in cands]
    best_key, best_score = min(scored, key=lambda t: (-t[1], t[0]))
    lv = np.array(best_key, dtype=int).reshape(-1, 2)
    plan.integer_levels = lv
    return RepairResult(lv, best_score, scored)
