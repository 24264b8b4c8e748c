"""User-density models, seeded sampling and experiment configuration.

Positions are plain numpy arrays: a single point is shape ``(2,)`` and a set
of points is shape ``(n, 2)``, always in meters.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import ChannelParams

METHODS = (
    "lloyd", "tsvq", "pdfvq",
    "lloyd+maxsum", "tsvq+maxsum", "pdfvq+maxsum",
    "lloyd+maxmin", "tsvq+maxmin", "pdfvq+maxmin",
)

DEFAULT_REGION = (-1000.0, 1000.0, -1000.0, 1000.0)


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


def _sym_sqrt(cov):
    w, v = np.linalg.eigh(cov)
    return (v * np.sqrt(w)) @ v.T


@dataclass(frozen=True)
class GmmComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(2)
        cov = np.asarray(self.covariance, dtype=float).reshape(2, 2)
        if not (0.0 < self.weight <= 1.0):
            raise ConfigError(f"component weight must lie in (0, 1], got {self.weight}")
        if not np.all(np.isfinite(mean)):
            raise ConfigError("component mean must be finite")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=0.0):
            raise ConfigError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ConfigError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def __eq__(self, other):
        if not isinstance(other, GmmComponent):
            return NotImplemented
        return (self.weight == other.weight and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.covariance, other.covariance))

    __hash__ = None


@dataclass(frozen=True)
class UserDensity:
    """Gaussian mixture density of user positions."""

    components: tuple[GmmComponent, ...]
    region: tuple[float, float, float, float] = DEFAULT_REGION

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise ConfigError("a density needs at least one component")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"component weights must sum to 1, got {total!r}")
        xmin, xmax, ymin, ymax = map(float, self.region)
        if not (xmin < xmax and ymin < ymax):
            raise ConfigError(f"degenerate region {self.region}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "region", (xmin, xmax, ymin, ymax))

    @classmethod
    def from_arrays(cls, weights, means, covariances, region=DEFAULT_REGION):
        comps = tuple(GmmComponent(float(w), m, c) for w, m, c in zip(weights, means, covariances))
        return cls(comps, region)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def covariances(self) -> np.ndarray:
        return np.array([c.covariance for c in self.components])

    def __len__(self):
        return len(self.components)


def sample_users(density: UserDensity, n: int, seed=None, *, rng=None, return_labels=False):
    """Draw ``n`` i.i.d. user positions from the mixture.

    Either ``seed`` or an existing ``rng`` (``numpy.random.Generator``) must be
    given. The component is picked by inverse CDF on the weights and the point
    is ``mean + sqrtm(cov) @ z`` with ``z`` standard normal.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(seed)
    cdf = np.cumsum(density.weights)
    u = rng.random(n)
    labels = np.minimum(np.searchsorted(cdf, u, side="right"), len(density) - 1)
    z = rng.standard_normal((n, 2))
    roots = np.array([_sym_sqrt(c.covariance) for c in density.components])
    pts = density.means[labels] + np.einsum("nij,nj->ni", roots[labels], z)
    if return_labels:
        return pts, labels
    return pts


def pdf_eval(density: UserDensity, p) -> np.ndarray | float:
    """Mixture density at ``p`` (shape ``(2,)`` or ``(n, 2)``), in 1/m^2."""
    pts = np.asarray(p, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    out = np.zeros(len(pts))
    for c in density.components:
        inv = np.linalg.inv(c.covariance)
        d = pts - c.mean
        quad = np.einsum("ni,ij,nj->n", d, inv, d)
        norm = 2.0 * np.pi * np.sqrt(np.linalg.det(c.covariance))
        out += c.weight * np.exp(-0.5 * quad) / norm
    return float(out[0]) if single else out


@dataclass(frozen=True)
class LloydSettings:
    restarts: int = 10
    max_iters: int = 50
    tol: float = 1e-6
    init: str = "kmeans++"


@dataclass(frozen=True)
class AscentSettings:
    step_max_sum: float = 1e3
    step_max_min: float = 3e4
    max_iters: int = 500
    tail_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.tail_fraction < 1.0:
            raise ConfigError(f"tail_fraction must lie in (0, 1), got {self.tail_fraction!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    density: UserDensity
    num_aps: int = 32
    num_users_placement: int = 2000
    num_users_eval: int = 4
    power_grid_db: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    mc_iterations: int = 1000
    seed: int = 1
    method: str = "lloyd"
    channel: ChannelParams = field(default_factory=ChannelParams)
    lloyd: LloydSettings = field(default_factory=LloydSettings)
    ascent: AscentSettings = field(default_factory=AscentSettings)
    repair_score: str = "sum_rate"
    repair_mc_iterations: int = 200
    likely95_mode: str = "pooled"
    mismatch_density: UserDensity | None = None

    def __post_init__(self):
        for name in ("num_aps", "num_users_placement", "num_users_eval", "mc_iterations"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.num_aps < self.num_users_eval:
            raise ConfigError(
                f"num_aps ({self.num_aps}) must be >= num_users_eval ({self.num_users_eval}) for zero forcing"
            )
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not self.power_grid_db:
            raise ConfigError("power_grid_db must not be empty")
        if self.repair_score not in ("sum_rate", "mse"):
            raise ConfigError(f"repair_score must be 'sum_rate' or 'mse', got {self.repair_score!r}")
        if self.likely95_mode not in ("pooled", "per_user"):
            raise ConfigError(f"likely95_mode must be 'pooled' or 'per_user', got {self.likely95_mode!r}")
        object.__setattr__(self, "power_grid_db", tuple(float(x) for x in self.power_grid_db))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "restarts" in kw:
            kw["lloyd"] = replace(self.lloyd, restarts=int(kw.pop("restarts")))
        return replace(self, **kw)

    @property
    def top_power_db(self) -> float:
        return max(self.power_grid_db)

    def to_dict(self) -> dict:
        return {
            "density": density_to_dict(self.density),
            "num_aps": self.num_aps,
            "num_users_placement": self.num_users_placement,
            "num_users_eval": self.num_users_eval,
            "power_grid_db": list(self.power_grid_db),
            "mc_iterations": self.mc_iterations,
            "seed": self.seed,
            "method": self.method,
            "channel": {
                "constant_c": self.channel.constant_c,
                "gamma": self.channel.gamma,
                "epsilon": self.channel.epsilon,
                "shadowing_sigma_db": self.channel.shadowing_sigma_db,
            },
            "lloyd": vars(self.lloyd).copy(),
            "ascent": vars(self.ascent).copy(),
            "repair_score": self.repair_score,
            "repair_mc_iterations": self.repair_mc_iterations,
            "likely95_mode": self.likely95_mode,
            "mismatch_density": None if self.mismatch_density is None else density_to_dict(self.mismatch_density),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def density_to_dict(density: UserDensity) -> dict:
    xmin, xmax, ymin, ymax = density.region
    return {
        "mean_units": "m",
        "region": {"xmin": xmin, "xmax": xmax, "ymin": ymin, "ymax": ymax},
        "components": [
            {"weight": c.weight, "mean": c.mean.tolist(), "covariance": c.covariance.tolist()}
            for c in density.components
        ],
    }


# --- config parsing ---------------------------------------------------------

_MEAN_SCALE = {"m": 1.0, "km": 1000.0}


def _require(obj, key, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    if key not in obj:
        raise ConfigError(f"{where}: missing required field '{key}'")
    return obj[key]


def _check_keys(obj, allowed, where):
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


def density_from_dict(d: dict, where="density") -> UserDensity:
    _check_keys(d, {"components", "region", "mean_units"}, where)
    units = d.get("mean_units", "m")
    if units not in _MEAN_SCALE:
        raise ConfigError(f"{where}.mean_units: expected 'm' or 'km', got {units!r}")
    scale = _MEAN_SCALE[units]
    comps_raw = _require(d, "components", where)
    if not isinstance(comps_raw, list) or not comps_raw:
        raise ConfigError(f"{where}.components: expected a non-empty list")
    comps = []
    for i, c in enumerate(comps_raw):
        loc = f"{where}.components[{i}]"
        _check_keys(c, {"weight", "mean", "covariance"}, loc)
        try:
            w = float(_require(c, "weight", loc))
            mean = np.asarray(_require(c, "mean", loc), dtype=float) * scale
            cov = np.asarray(_require(c, "covariance", loc), dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{loc}: {exc}") from None
        if mean.shape != (2,):
            raise ConfigError(f"{loc}.mean: expected [x, y]")
        if cov.shape != (2, 2):
            raise ConfigError(f"{loc}.covariance: expected [[a, b], [b, c]]")
        try:
            comps.append(GmmComponent(w, mean, cov))
        except ConfigError as exc:
            raise ConfigError(f"{loc}: {exc}") from None
    region = DEFAULT_REGION
    if "region" in d:
        r = d["region"]
        _check_keys(r, {"xmin", "xmax", "ymin", "ymax"}, f"{where}.region")
        region = tuple(float(_require(r, k, f"{where}.region")) for k in ("xmin", "xmax", "ymin", "ymax"))
    try:
        return UserDensity(tuple(comps), region)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None


_TOP_KEYS = {
    "density", "num_aps", "num_users_placement", "num_users_eval", "power_grid_db",
    "mc_iterations", "seed", "method", "channel", "lloyd", "ascent", "repair_score",
    "repair_mc_iterations", "likely95_mode", "mismatch_density",
}


def _settings(cls, raw, where):
    try:
        out = cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    for name, default in vars(cls()).items():
        v = getattr(out, name)
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{where}.{name}: expected a positive number, got {v!r}")
    return out


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(d, _TOP_KEYS, "config")
    kw = {"density": density_from_dict(_require(d, "density", "config"))}
    if d.get("mismatch_density") is not None:
        kw["mismatch_density"] = density_from_dict(d["mismatch_density"], "mismatch_density")
    for key in ("num_aps", "num_users_placement", "num_users_eval", "mc_iterations", "seed",
                "repair_mc_iterations"):
        if key in d:
            v = d[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"config.{key}: expected an integer, got {v!r}")
            kw[key] = v
    for key in ("method", "repair_score", "likely95_mode"):
        if key in d:
            kw[key] = str(d[key])
    if "power_grid_db" in d:
        try:
            kw["power_grid_db"] = tuple(float(x) for x in d["power_grid_db"])
        except (TypeError, ValueError):
            raise ConfigError("config.power_grid_db: expected a list of numbers") from None
    if "channel" in d:
        ch = d["channel"]
        _check_keys(ch, {"constant_c", "gamma", "epsilon", "shadowing_sigma_db"}, "config.channel")
        try:
            kw["channel"] = ChannelParams(**ch)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.channel: {exc}") from None
    if "lloyd" in d:
        _check_keys(d["lloyd"], {"restarts", "max_iters", "tol", "init"}, "config.lloyd")
        kw["lloyd"] = _settings(LloydSettings, d["lloyd"], "config.lloyd")
        if kw["lloyd"].init not in ("kmeans++", "random"):
            raise ConfigError("config.lloyd.init: expected 'kmeans++' or 'random'")
    if "ascent" in d:
        _check_keys(d["ascent"], {"step_max_sum", "step_max_min", "max_iters", "tail_fraction"},
                    "config.ascent")
        kw["ascent"] = _settings(AscentSettings, d["ascent"], "config.ascent")
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw)


# --- named densities --------------------------------------------------------

SIGMA_EXP = 100.0


def experiment1_density(mean_units="km") -> UserDensity:
    """Three spherical clusters; mean coordinates read in ``mean_units``."""
    s = _MEAN_SCALE[mean_units]
    cov = SIGMA_EXP**2 * np.eye(2)
    return UserDensity.from_arrays(
        [0.6, 0.2, 0.2],
        [[0.5 * s, -0.5 * s], [0.0, 0.5 * s], [-0.5 * s, 0.0]],
        [cov, cov, cov],
    )


def experiment2_density(mean_units="km") -> UserDensity:
    base = experiment1_density(mean_units)
    s2 = SIGMA_EXP**2
    comps = list(base.components)
    comps[1] = GmmComponent(0.2, comps[1].mean, s2 * np.array([[1.0, 2.0 / 3.0], [2.0 / 3.0, 2.0]]))
    return UserDensity(tuple(comps), base.region)


def experiment4_densities() -> tuple[UserDensity, UserDensity]:
    sa, sb = 200.0, 300.0
    a = UserDensity.from_arrays([1.0], [[0.0, 0.0]], [sa**2 * np.array([[1.0, 1 / 3], [1 / 3, 0.5]])])
    b = UserDensity.from_arrays([1.0], [[0.0, 0.0]], [sb**2 * np.array([[0.5, 0.5], [0.5, 1.0]])])
    return a, b
