"""End-to-end placement and evaluation pipelines for the four experiments.

Random streams are tied to ``config.seed``: the training users and the Lloyd
restarts use the seed directly, the budget-repair and evaluation draws use
child streams derived from it (see :func:`stream_seed`). Every method in one
run is trained on the same user set and evaluated with the same Monte Carlo
stream, so method differences are not blurred by independent sampling noise.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import ChannelParams, db_to_linear
from .gradient import AscentConfig, ascend
from .metrics import FLOAT_FMT, RateReport, evaluate_placement, improvement_ratio
from .pdfvq import allocation_plan, assemble_codebook, budget_repair
from .scenario import (
    AscentSettings,
    ConfigError,
    ExperimentConfig,
    UserDensity,
    experiment1_density,
    experiment2_density,
    experiment4_densities,
    sample_users,
)
from .tsvq import tsvq_run
from .vq import lloyd, nearest_neighbor_partition

# Child-stream identifiers; chosen away from 0..restarts-1, which the Lloyd
# restarts spawn from the same root seed.
_STREAMS = {"repair": 101, "eval": 102}

# Far-field gain used by the experiment presets (see README, "Channel scale").
PRESET_CONSTANT_C = 1e4

BASE_METHODS = ("lloyd", "tsvq", "pdfvq")


def stream_seed(seed: int, name: str) -> int:
    """64-bit integer seed of the named child stream of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_STREAMS[name],))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def training_users(cfg: ExperimentConfig, density: UserDensity | None = None) -> np.ndarray:
    return sample_users(density or cfg.density, cfg.num_users_placement, seed=cfg.seed)


@dataclass
class PlacementOutcome:
    method: str
    placement: np.ndarray
    info: dict = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "num_aps": int(len(self.placement)),
            "ap_positions_m": [[float(x), float(y)] for x, y in self.placement],
            "info": self.info,
        }


def _repair_hook(cfg: ExperimentConfig, density, users):
    if cfg.repair_score == "mse":
        return lambda pl: -nearest_neighbor_partition(users, pl).mse
    seed = stream_seed(cfg.seed, "repair")

    def score(pl):
        rep = evaluate_placement(pl, density, cfg.channel, cfg.num_users_eval, [cfg.top_power_db],
                                 cfg.repair_mc_iterations, seed, keep_samples=False)
        return rep.sum_rate[0]

    return score


def _base_placement(cfg: ExperimentConfig, method: str, users, density) -> PlacementOutcome:
    t0 = time.perf_counter()
    M = cfg.num_aps
    if method == "lloyd":
        s = cfg.lloyd
        res = lloyd(users, M, restarts=s.restarts, seed=cfg.seed, init_method=s.init,
                    max_iters=s.max_iters, tol=s.tol)
        out = PlacementOutcome(method, res.placement,
                               {"mse_m2": res.mse, "iterations": res.iterations, "converged": res.converged})
    elif method == "tsvq":
        pl = tsvq_run(users, M, max_iters=cfg.lloyd.max_iters, tol=cfg.lloyd.tol)
        out = PlacementOutcome(method, pl, {"mse_m2": nearest_neighbor_partition(users, pl).mse})
    elif method == "pdfvq":
        plan = allocation_plan(density, M)
        rep = budget_repair(plan, density, M, _repair_hook(cfg, density, users))
        pl = assemble_codebook(density, plan)
        out = PlacementOutcome(method, pl, {
            "continuous_levels": plan.continuous_levels.tolist(),
            "integer_levels": rep.levels.tolist(),
            "repair_score": cfg.repair_score,
            "num_candidates": len(rep.candidates),
        })
    else:
        raise ConfigError(f"unknown base method {method!r}")
    out.seconds = time.perf_counter() - t0
    return out


def ascent_config(settings: AscentSettings, objective: str, rho_r: float) -> AscentConfig:
    step = settings.step_max_sum if objective == "max_sum" else settings.step_max_min
    return AscentConfig(step_delta=step, rho_r=rho_r, max_iters=settings.max_iters,
                        objective=objective, tail_fraction=settings.tail_fraction)


def place(cfg: ExperimentConfig, methods=None, *, density: UserDensity | None = None,
          users=None) -> dict[str, PlacementOutcome]:
    """Compute placements for ``methods`` (default ``cfg.method``).

    Refined methods (``base+maxsum`` / ``base+maxmin``) reuse the base
    placement, and the ascent runs on the training users at the top power of
    the grid.
    """
    density = density or cfg.density
    methods = [cfg.method] if methods is None else list(methods)
    users = training_users(cfg, density) if users is None else users
    rho_top = float(db_to_linear(cfg.top_power_db))
    out: dict[str, PlacementOutcome] = {}
    for method in methods:
        base, _, refine = method.partition("+")
        if base not in out:
            out[base] = _base_placement(cfg, base, users, density)
        if not refine:
            continue
        t0 = time.perf_counter()
        objective = {"maxsum": "max_sum", "maxmin": "max_min"}[refine]
        res = ascend(out[base].placement, users, cfg.channel, ascent_config(cfg.ascent, objective, rho_top))
        out[method] = PlacementOutcome(method, res.placement, {
            "start": base,
            "objective": objective,
            "iterations": res.iterations,
            "step_halvings": res.halvings,
            "start_objective": res.trace[0],
            "best_objective": res.best_objective,
        }, time.perf_counter() - t0)
    return {m: out[m] for m in methods}


def evaluate(cfg: ExperimentConfig, placement, density: UserDensity | None = None) -> RateReport:
    return evaluate_placement(placement, density or cfg.density, cfg.channel, cfg.num_users_eval,
                              cfg.power_grid_db, cfg.mc_iterations, stream_seed(cfg.seed, "eval"),
                              likely95_mode=cfg.likely95_mode, keep_samples=False)


@dataclass
class ExperimentResult:
    name: str
    config: ExperimentConfig
    placements: dict[str, PlacementOutcome]
    reports: dict[str, RateReport]
    improvements: list[dict]
    seconds: float = 0.0

    def improvement(self, method, baseline=None, power_db=None) -> dict:
        p = self.config.top_power_db if power_db is None else power_db
        for row in self.improvements:
            if row["method"] == method and (baseline is None or row["baseline"] == baseline) \
                    and np.isclose(row["rho_r_db"], p):
                return row
        raise KeyError(f"no improvement row for {method!r}")


IMPROVEMENT_COLUMNS = ("method", "baseline", "rho_r_db", "sum_rate_improvement_pct",
                       "likely95_improvement_pct")


def improvement_rows(new: RateReport, base: RateReport, method: str, baseline: str) -> list[dict]:
    rows = []
    for i, p in enumerate(base.powers_db):
        rows.append({
            "method": method,
            "baseline": baseline,
            "rho_r_db": float(p),
            "sum_rate_improvement_pct": improvement_ratio(new.sum_rate[i], base.sum_rate[i]),
            "likely95_improvement_pct": improvement_ratio(new.likely95_rate[i], base.likely95_rate[i]),
        })
    return rows


def improvements_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(IMPROVEMENT_COLUMNS)
    for r in rows:
        w.writerow([r["method"], r["baseline"]] + [FLOAT_FMT.format(float(r[k])) for k in IMPROVEMENT_COLUMNS[2:]])
    return buf.getvalue()


def _compare_to_lloyd(name, cfg, methods) -> ExperimentResult:
    t0 = time.perf_counter()
    placements = place(cfg, ("lloyd",) + tuple(m for m in methods if m != "lloyd"))
    reports = {m: evaluate(cfg, o.placement) for m, o in placements.items()}
    rows = []
    for m in placements:
        if m != "lloyd":
            rows += improvement_rows(reports[m], reports["lloyd"], m, "lloyd")
    return ExperimentResult(name, cfg, placements, reports, rows, time.perf_counter() - t0)


def experiment1(cfg: ExperimentConfig | None = None) -> ExperimentResult:
    """TSVQ and PDFVQ against Lloyd on the spherical three-cluster mixture."""
    return _compare_to_lloyd("experiment1", cfg or preset_config("experiment1"), BASE_METHODS)


def experiment2(cfg: ExperimentConfig | None = None) -> ExperimentResult:
    """As :func:`experiment1` with one full-covariance cluster."""
    return _compare_to_lloyd("experiment2", cfg or preset_config("experiment2"), BASE_METHODS)


EXPERIMENT3_METHODS = (
    "lloyd", "tsvq", "pdfvq",
    "lloyd+maxsum", "tsvq+maxsum", "pdfvq+maxsum",
    "lloyd+maxmin", "tsvq+maxmin", "pdfvq+maxmin",
)


def experiment3(cfg: ExperimentConfig | None = None) -> ExperimentResult:
    """Max-sum and max-min ascent from each VQ placement, against plain Lloyd."""
    return _compare_to_lloyd("experiment3", cfg or preset_config("experiment3"), EXPERIMENT3_METHODS)


def experiment4(cfg: ExperimentConfig | None = None) -> ExperimentResult:
    """PDFVQ placements matched to density A, evaluated after users move to density B.

    Reports are keyed ``pdfvq[A]@A``, ``pdfvq[A]@B`` and ``pdfvq[B]@B``. The
    improvement rows compare the mismatched case against the re-matched
    placement and against the same placement before the move; negative
    values are losses.
    """
    cfg = cfg or preset_config("experiment4")
    t0 = time.perf_counter()
    dens_a = cfg.density
    dens_b = cfg.mismatch_density
    if dens_b is None:
        raise ConfigError("experiment4 needs config.mismatch_density (the density users move to)")
    pa = place(cfg, ["pdfvq"], density=dens_a)["pdfvq"]
    pb = place(cfg, ["pdfvq"], density=dens_b)["pdfvq"]
    placements = {"pdfvq[A]": pa, "pdfvq[B]": pb}
    reports = {
        "pdfvq[A]@A": evaluate(cfg, pa.placement, dens_a),
        "pdfvq[A]@B": evaluate(cfg, pa.placement, dens_b),
        "pdfvq[B]@B": evaluate(cfg, pb.placement, dens_b),
    }
    rows = improvement_rows(reports["pdfvq[A]@B"], reports["pdfvq[B]@B"], "pdfvq[A]@B", "pdfvq[B]@B")
    rows += improvement_rows(reports["pdfvq[A]@B"], reports["pdfvq[A]@A"], "pdfvq[A]@B", "pdfvq[A]@A")
    return ExperimentResult("experiment4", cfg, placements, reports, rows, time.perf_counter() - t0)


EXPERIMENTS = {
    "experiment1": experiment1,
    "experiment2": experiment2,
    "experiment3": experiment3,
    "experiment4": experiment4,
}


def preset_config(name: str, **overrides) -> ExperimentConfig:
    """Desk-scale configuration of a named experiment.

    All presets use the far-field gain ``PRESET_CONSTANT_C``. Experiment 3
    trains the max-min objective on the worst 10% of training users.
    """
    channel = ChannelParams(constant_c=PRESET_CONSTANT_C)
    if name == "experiment1":
        cfg = ExperimentConfig(experiment1_density(), channel=channel)
    elif name == "experiment2":
        cfg = ExperimentConfig(experiment2_density(), channel=channel)
    elif name == "experiment3":
        cfg = ExperimentConfig(experiment2_density(), channel=channel,
                               ascent=AscentSettings(tail_fraction=0.1))
    elif name == "experiment4":
        a, b = experiment4_densities()
        cfg = ExperimentConfig(a, num_aps=18, method="pdfvq", channel=channel, mismatch_density=b)
    else:
        raise ConfigError(f"unknown experiment preset {name!r}")
    return replace(cfg, **overrides) if overrides else cfg
