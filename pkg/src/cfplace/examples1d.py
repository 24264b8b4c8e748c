"""Four APs on a line serving users from a one- or two-component Gaussian.

SNR is the large-array form ``psi(p) = sum_i 1 / ((p - q_i)**2 + eps)``
(unit power, pathloss exponent 2, unit gain, no fading). Three metrics are
reported for a placement ``q``:

* sum SNR ``E[psi(P)]``,
* rate per user ``E[log2(1 + psi(P))]`` (the sum rate divided by the number
  of users),
* 95%-likely rate, the 5th percentile of ``log2(1 + psi(P))``.

With ``eps = 1e-9`` a sample mean of ``psi`` is dominated by the handful of
users that land within ``sqrt(eps)`` of an AP (the variance is unbounded),
so the sum SNR is evaluated exactly instead: for ``P ~ N(mu, sigma**2)``,
``E[1 / ((P - q)**2 + eps)] = pi / sqrt(eps) * V(q - mu; sigma, sqrt(eps))``
with ``V`` the Voigt profile. The two rate metrics are sample averages.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import voigt_profile

from .vq import lloyd

NUM_APS = 4
EPSILON = 1e-9
NUM_SAMPLES = 100_000
GRID_STEP = 0.01


@dataclass(frozen=True)
class Config1D:
    """Gaussian mixture on the line; one component gives the unimodal case."""

    name: str
    weights: tuple[float, ...]
    means: tuple[float, ...]
    sigmas: tuple[float, ...]
    num_aps: int = NUM_APS
    epsilon: float = EPSILON
    num_samples: int = NUM_SAMPLES

    def __post_init__(self):
        if not len(self.weights) == len(self.means) == len(self.sigmas) >= 1:
            raise ValueError("weights, means and sigmas must have the same nonzero length")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if min(self.sigmas) <= 0:
            raise ValueError("sigmas must be > 0")

    @property
    def bimodal(self) -> bool:
        return len(self.weights) == 2

    def mirrored(self) -> "Config1D":
        return Config1D(self.name + "-mirrored", self.weights, tuple(-m for m in self.means),
                        self.sigmas, self.num_aps, self.epsilon, self.num_samples)

    def sample(self, seed=None, *, rng=None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(seed)
        w = np.asarray(self.weights)
        comp = np.minimum(np.searchsorted(np.cumsum(w), rng.random(self.num_samples), side="right"),
                          len(w) - 1)
        z = rng.standard_normal(self.num_samples)
        return np.asarray(self.means)[comp] + np.asarray(self.sigmas)[comp] * z

    def span(self, pad=4.0) -> tuple[float, float]:
        lo = min(m - pad * s for m, s in zip(self.means, self.sigmas))
        hi = max(m + pad * s for m, s in zip(self.means, self.sigmas))
        return lo, hi


CONF1 = Config1D("conf1", (0.5, 0.5), (-3.0, 3.0), (1.0, 1.0))
CONF2 = Config1D("conf2", (0.35, 0.65), (-3.0, 4.0), (1.0, 1.0))
UNIMODAL = Config1D("unimodal", (1.0,), (0.0,), (1.0,))


# --- metrics -----------------------------------------------------------------

def snr(users, placement, epsilon=EPSILON) -> np.ndarray:
    p = np.asarray(users, dtype=float)
    q = np.asarray(placement, dtype=float)
    return np.sum(1.0 / ((p[..., None] - q) ** 2 + epsilon), axis=-1)


def rates(users, placement, epsilon=EPSILON) -> np.ndarray:
    return np.log2(1.0 + snr(users, placement, epsilon))


def expected_snr_single(config: Config1D, q) -> np.ndarray:
    """``E[1 / ((P - q)**2 + eps)]`` for one AP at ``q`` (vectorized over ``q``)."""
    q = np.asarray(q, dtype=float)
    g = np.sqrt(config.epsilon)
    out = np.zeros(q.shape)
    for w, m, s in zip(config.weights, config.means, config.sigmas):
        out += w * voigt_profile(q - m, s, g)
    return np.pi / g * out


def sum_snr(config: Config1D, placement, users=None) -> float:
    """Exact sum SNR, or the sample mean over ``users`` when they are given."""
    if users is not None:
        return float(snr(users, placement, config.epsilon).mean())
    return float(expected_snr_single(config, np.asarray(placement, dtype=float)).sum())


@dataclass
class Metrics1D:
    placement: np.ndarray
    sum_snr: float
    rate: float
    likely95: float


def evaluate(config: Config1D, placement, users) -> Metrics1D:
    q = np.sort(np.asarray(placement, dtype=float))
    r = rates(users, q, config.epsilon)
    return Metrics1D(q, sum_snr(config, q), float(r.mean()), float(np.quantile(r, 0.05)))


# --- placements ----------------------------------------------------------------

def sweep_grid(config: Config1D, step=GRID_STEP) -> np.ndarray:
    lo, hi = config.span()
    return np.round(np.arange(np.floor(lo), np.ceil(hi) + step / 2, step), 10)


@dataclass
class ColocatedSweep:
    q: np.ndarray
    sum_snr: np.ndarray
    rate: np.ndarray
    likely95: np.ndarray

    def peaks(self, metric="sum_snr") -> np.ndarray:
        """Grid positions of the strict local maxima of a metric curve."""
        v = getattr(self, metric)
        inner = (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])
        return self.q[1:-1][inner]

    def best(self, metric) -> tuple[float, float]:
        v = getattr(self, metric)
        i = int(np.argmax(v))
        return float(self.q[i]), float(v[i])


def colocated_sweep(config: Config1D, users, grid=None, chunk=64) -> ColocatedSweep:
    """All APs at one point ``q`` for every ``q`` on the grid."""
    grid = sweep_grid(config) if grid is None else np.asarray(grid, dtype=float)
    n = config.num_aps
    s = n * expected_snr_single(config, grid)
    rate = np.empty(len(grid))
    l95 = np.empty(len(grid))
    for a in range(0, len(grid), chunk):
        g = grid[a:a + chunk]
        r = np.log2(1.0 + n / ((users[None, :] - g[:, None]) ** 2 + config.epsilon))
        rate[a:a + chunk] = r.mean(axis=1)
        l95[a:a + chunk] = np.quantile(r, 0.05, axis=1)
    return ColocatedSweep(grid, s, rate, l95)


def semi_distributed(config: Config1D, a: int) -> np.ndarray:
    """``a`` APs at the first mean and ``num_aps - a`` at the second."""
    if not config.bimodal:
        raise ValueError("semi-distributed placements need a two-component mixture")
    if not 1 <= a <= config.num_aps - 1:
        raise ValueError(f"a must lie in 1..{config.num_aps - 1}")
    m1, m2 = config.means
    return np.array([m1] * a + [m2] * (config.num_aps - a), dtype=float)


def semi_distributed_eval(config: Config1D, users) -> dict[str, Metrics1D]:
    out = {}
    for a in range(1, config.num_aps):
        out[f"{a}+{config.num_aps - a}"] = evaluate(config, semi_distributed(config, a), users)
    return out


OBJECTIVES = ("sum_snr", "rate", "likely95")


def _objective(config, users, objective):
    if objective == "sum_snr":
        return lambda q: sum_snr(config, q)
    if objective == "rate":
        return lambda q: float(rates(users, q, config.epsilon).mean())
    if objective == "likely95":
        return lambda q: float(np.quantile(rates(users, q, config.epsilon), 0.05))
    raise ValueError(f"unknown objective {objective!r}; choose from {OBJECTIVES}")


def _fully_distributed_placement(config, d):
    m1, m2 = config.means
    return np.array([m1 - d[0], m1 + d[0], m2 - d[1], m2 + d[1]])


@dataclass
class SearchResult:
    displacement: np.ndarray  # half-spacing of the AP pair at each mean
    placement: np.ndarray
    value: float
    sweeps: int
    history: list[float] = field(default_factory=list)


def _line_search(f, x0, lo, hi, steps=(0.05, 0.005, 0.0005)):
    best_x, best_v = x0, f(x0)
    a, b = lo, hi
    for h in steps:
        for x in np.linspace(a, b, max(2, int(round((b - a) / h)) + 1)):
            v = f(x)
            if v > best_v:
                best_x, best_v = float(x), v
        a, b = max(lo, best_x - h), min(hi, best_x + h)
    return best_x, best_v


def fully_distributed_search(config: Config1D, users, objective="rate", *, max_sweeps=10,
                             tol=1e-4) -> SearchResult:
    """Spread the AP pair at each mean apart from the (2+2) start.

    Ascent over the two half-spacings: each sweep line-searches the first,
    then the second, then both together (the tail objective couples them,
    and coordinate steps alone zigzag). A line search scans a grid on the
    feasible range ``[0, 3 sigma]`` and refines it twice by a factor 10. The
    result is a local maximum of the chosen objective.
    """
    if not config.bimodal or config.num_aps != 4:
        raise ValueError("the fully distributed search is defined for 4 APs and two clusters")
    f = _objective(config, users, objective)
    upper = 3.0 * np.asarray(config.sigmas, dtype=float)
    d = np.zeros(2)
    cur = f(_fully_distributed_placement(config, d))
    hist = [cur]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        prev = d.copy()
        for u in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])):
            nz = u > 0
            lo = float(np.max(-d[nz]))
            hi = float(np.min(upper[nz] - d[nz]))
            base = d.copy()
            t, cur = _line_search(lambda t: f(_fully_distributed_placement(config, base + t * u)),
                                  0.0, lo, hi)
            d = base + t * u
        hist.append(cur)
        if np.max(np.abs(d - prev)) < tol:
            break
    return SearchResult(d, np.sort(_fully_distributed_placement(config, d)), cur, sweeps, hist)


def lloyd_1d(config: Config1D, users, *, restarts=10, seed=0) -> np.ndarray:
    """Lloyd placement of ``num_aps`` points, run on the users embedded as ``(p, 0)``."""
    pts = np.column_stack([users, np.zeros(len(users))])
    return np.sort(lloyd(pts, config.num_aps, restarts=restarts, seed=seed).placement[:, 0])


# --- the full study --------------------------------------------------------------

@dataclass
class Study1D:
    config: Config1D
    colocated: ColocatedSweep
    solutions: dict[str, Metrics1D]
    searches: dict[str, SearchResult]

    def colocated_best(self, metric) -> float:
        return self.colocated.best(metric)[1]


def run_study(config: Config1D, seed=0, *, lloyd_restarts=10, grid=None) -> Study1D:
    users = config.sample(seed)
    sweep = colocated_sweep(config, users, grid)
    solutions = {"lloyd": evaluate(config, lloyd_1d(config, users, restarts=lloyd_restarts, seed=seed), users)}
    searches = {}
    if config.bimodal:
        solutions.update(semi_distributed_eval(config, users))
        for obj in OBJECTIVES:
            res = fully_distributed_search(config, users, obj)
            searches[obj] = res
            solutions[f"fully_distributed[{obj}]"] = evaluate(config, res.placement, users)
    return Study1D(config, sweep, solutions, searches)


# Figure analogs: (file stem, config name, metric, fully distributed variant shown)
FIGURES = (
    ("fig1_sum_snr_conf1", "conf1", "sum_snr", "sum_snr"),
    ("fig2_sum_snr_conf2", "conf2", "sum_snr", "sum_snr"),
    ("fig3_sum_rate_conf1", "conf1", "rate", "rate"),
    ("fig4_sum_rate_conf2", "conf2", "rate", "rate"),
    ("fig5_likely95_conf1", "conf1", "likely95", "likely95"),
    ("fig6_likely95_conf2", "conf2", "likely95", "likely95"),
    ("fig7_sum_snr_unimodal", "unimodal", "sum_snr", None),
    ("fig8_sum_rate_unimodal", "unimodal", "rate", None),
)


def figure_rows(study: Study1D, metric: str, fully=None) -> list[tuple[str, str, float]]:
    """Rows ``(solution, q, value)``; ``q`` is blank except on the colocated curve."""
    rows = [("colocated", f"{q:.2f}", float(v)) for q, v in zip(study.colocated.q, getattr(study.colocated, metric))]
    for label, m in study.solutions.items():
        if label.startswith("fully_distributed"):
            if fully is None or label != f"fully_distributed[{fully}]":
                continue
            label = "fully_distributed"
        rows.append((label, "", float(getattr(m, metric))))
    return rows


def figure_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["solution", "q", "value"])
    for label, q, v in rows:
        w.writerow([label, q, f"{v:.9g}"])
    return buf.getvalue()


def placements_csv(studies: dict[str, Study1D]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "solution", "q1", "q2", "q3", "q4", "sum_snr", "rate", "likely95"])
    for name, st in studies.items():
        for label, m in st.solutions.items():
            w.writerow([name, label] + [f"{x:.9g}" for x in m.placement]
                       + [f"{m.sum_snr:.9g}", f"{m.rate:.9g}", f"{m.likely95:.9g}"])
    return buf.getvalue()


def run_all(seed=0, configs=(CONF1, CONF2, UNIMODAL)) -> dict[str, Study1D]:
    return {c.name: run_study(c, seed) for c in configs}


def write_outputs(studies: dict[str, Study1D], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for stem, conf, metric, fully in FIGURES:
        if conf not in studies:
            continue
        p = out / f"{stem}.csv"
        p.write_text(figure_csv(figure_rows(studies[conf], metric, fully)))
        paths.append(p)
    p = out / "oned_solutions.csv"
    p.write_text(placements_csv(studies))
    paths.append(p)
    return paths
