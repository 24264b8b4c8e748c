"""Command-line experiment runner.

Every subcommand writes into ``--out`` and finishes with a ``manifest.json``
listing the config digest, seed, method and output files. Wall-clock timings
go to ``timings.txt`` so the JSON outputs stay byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

from . import __version__
from .experiments import (
    EXPERIMENTS,
    ExperimentResult,
    evaluate,
    improvement_rows,
    improvements_csv,
    place,
    preset_config,
)
from .metrics import FLOAT_FMT, RateReport
from .scenario import METHODS, ConfigError, ExperimentConfig, load_config

RATE_COLUMNS = ("rho_r_db", "sum_rate", "likely95_rate", "stderr_sum", "stderr_95")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Run:
    """Collects output files and timings for one invocation."""

    def __init__(self, args, out_dir: Path):
        self.args = args
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def write(self, name: str, text: str) -> Path:
        p = self.out / name
        p.write_text(text)
        self.files.append(name)
        return p

    def add_file(self, path: Path):
        self.files.append(str(Path(path).relative_to(self.out)))

    def time(self, label, seconds):
        self.timings[label] = seconds

    def finish(self, subcommand, cfg: ExperimentConfig | None, method=None):
        self.timings["total"] = time.perf_counter() - self._t0
        lines = [f"{k}\t{v:.3f}" for k, v in self.timings.items()]
        self.write("timings.txt", "label\tseconds\n" + "\n".join(lines) + "\n")
        manifest = {
            "tool": "cfplace",
            "version": __version__,
            "subcommand": subcommand,
            "config_sha256": cfg.digest() if cfg is not None else None,
            "seed": cfg.seed if cfg is not None else self.args.seed,
            "method": method,
            "outputs": sorted(self.files) + ["manifest.json"],
            "timings_file": "timings.txt",
        }
        (self.out / "manifest.json").write_text(_dump_json(manifest))
        if not self.args.quiet:
            print(f"wrote {len(self.files) + 1} files to {self.out}")


def _config(args, preset=None) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif preset is not None:
        cfg = preset_config(preset)
    else:
        raise ConfigError("--config is required for this subcommand")
    return cfg.with_overrides(seed=args.seed, mc_iterations=args.mc_iters,
                              restarts=args.restarts, method=getattr(args, "method", None))


def _placement_doc(cfg, outcomes) -> dict:
    return {
        "units": "m",
        "config_sha256": cfg.digest(),
        "placements": {m: o.to_dict() for m, o in outcomes.items()},
    }


def _rates_csv(reports: dict[str, RateReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method",) + RATE_COLUMNS)
    for label, rep in reports.items():
        for row in zip(rep.powers_db, rep.sum_rate, rep.likely95_rate, rep.stderr_sum, rep.stderr_95):
            w.writerow([label] + [FLOAT_FMT.format(float(v)) for v in row])
    return buf.getvalue()


def _rates_json(reports: dict[str, RateReport]) -> str:
    return _dump_json({label: rep.to_dict() for label, rep in reports.items()})


def _summary(rows, out=sys.stdout):
    for r in rows:
        print(f"{r['method']:>16s} vs {r['baseline']:<12s} rho={r['rho_r_db']:5.1f} dB  "
              f"sum {r['sum_rate_improvement_pct']:+8.2f}%  95%-likely {r['likely95_improvement_pct']:+8.2f}%",
              file=out)


# --- subcommands -----------------------------------------------------------------

def cmd_place(args):
    cfg = _config(args)
    run = Run(args, Path(args.out))
    t = time.perf_counter()
    outcomes = place(cfg)
    run.time("place", time.perf_counter() - t)
    run.write("placement.json", _dump_json(_placement_doc(cfg, outcomes)))
    if args.plot:
        from .plotting import plot_placements

        run.add_file(plot_placements({m: o.placement for m, o in outcomes.items()}, cfg.density,
                                     run.out / "placement.png"))
    run.finish("place", cfg, cfg.method)


def _load_placement(path, method):
    doc = json.loads(Path(path).read_text())
    pls = doc["placements"]
    key = method if method in pls else next(iter(pls))
    return key, pls[key]["ap_positions_m"]


def cmd_evaluate(args):
    cfg = _config(args)
    run = Run(args, Path(args.out))
    t = time.perf_counter()
    if args.placement:
        method, placement = _load_placement(args.placement, cfg.method)
    else:
        out = place(cfg)
        method, placement = cfg.method, out[cfg.method].placement
        run.write("placement.json", _dump_json(_placement_doc(cfg, out)))
    run.time("place", time.perf_counter() - t)
    t = time.perf_counter()
    reports = {method: evaluate(cfg, placement)}
    run.time("evaluate", time.perf_counter() - t)
    run.write("rates.csv", _rates_csv(reports))
    run.write("rates.json", _rates_json(reports))
    if args.plot:
        from .plotting import plot_rates

        for p in plot_rates(reports, run.out):
            run.add_file(p)
    if not args.quiet:
        for label, rep in reports.items():
            print(label)
            print(rep.to_csv(), end="")
    run.finish("evaluate", cfg, method)


def _experiment_outputs(run: Run, res: ExperimentResult, plot: bool):
    cfg = res.config
    run.write("placement.json", _dump_json(_placement_doc(cfg, res.placements)))
    run.write("rates.csv", _rates_csv(res.reports))
    run.write("rates.json", _rates_json(res.reports))
    run.write("improvements.csv", improvements_csv(res.improvements))
    for label, o in res.placements.items():
        run.time(f"place:{label}", o.seconds)
    run.time("experiment", res.seconds)
    if plot:
        from .plotting import plot_placements, plot_rates

        for p in plot_rates(res.reports, run.out):
            run.add_file(p)
        pls = {m: o.placement for m, o in res.placements.items()}
        if res.name == "experiment4":
            run.add_file(plot_placements({"pdfvq[A]": pls["pdfvq[A]"]}, cfg.density, run.out / "placement_A.png"))
            run.add_file(plot_placements(pls, cfg.mismatch_density, run.out / "placement_B.png"))
        else:
            run.add_file(plot_placements(pls, cfg.density, run.out / "placement.png"))


def cmd_experiment(args):
    name = args.command
    cfg = _config(args, preset=name)
    run = Run(args, Path(args.out))
    res = EXPERIMENTS[name](cfg)
    _experiment_outputs(run, res, args.plot)
    if not args.quiet:
        top = [r for r in res.improvements if r["rho_r_db"] == cfg.top_power_db]
        _summary(top)
    run.finish(name, cfg, None)


def cmd_oned(args):
    from .examples1d import CONF1, CONF2, FIGURES, UNIMODAL, figure_rows, run_study, write_outputs

    run = Run(args, Path(args.out))
    seed = 0 if args.seed is None else args.seed
    studies = {}
    for c in (CONF1, CONF2, UNIMODAL):
        t = time.perf_counter()
        studies[c.name] = run_study(c, seed)
        run.time(f"oned:{c.name}", time.perf_counter() - t)
    for p in write_outputs(studies, run.out):
        run.add_file(p)
    summary = {
        name: {label: {"placement": [float(x) for x in m.placement], "sum_snr": m.sum_snr,
                       "rate": m.rate, "likely95": m.likely95}
               for label, m in st.solutions.items()}
        for name, st in studies.items()
    }
    run.write("oned.json", _dump_json({"seed": seed, "solutions": summary}))
    if args.plot:
        from .plotting import plot_oned_figure

        for stem, conf, metric, fully in FIGURES:
            rows = figure_rows(studies[conf], metric, fully)
            run.add_file(plot_oned_figure(rows, f"{metric} ({conf})", run.out / f"{stem}.png"))
    run.finish("oned", None, None)


def cmd_compare(args):
    run = Run(args, Path(args.out))
    new = json.loads(Path(args.new).read_text())
    base = json.loads(Path(args.base).read_text())
    rows = []
    for label_b, rb in base.items():
        base_rep = RateReport.from_dict(rb)
        for label_n, rn in new.items():
            rows += improvement_rows(RateReport.from_dict(rn), base_rep, label_n, label_b)
    run.write("improvements.csv", improvements_csv(rows))
    if not args.quiet:
        _summary(rows)
    run.finish("compare", None, None)


# --- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfplace", description="Cell-free AP placement by vector quantization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--quiet", action="store_true", help="suppress console output")
    common.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSV files")
    run_opts = argparse.ArgumentParser(add_help=False)
    run_opts.add_argument("--config", help="JSON experiment config")
    run_opts.add_argument("--mc-iters", type=int, help="override the Monte Carlo trial count")
    run_opts.add_argument("--restarts", type=int, help="override the Lloyd restart count")

    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("place", "compute an AP placement"), ("evaluate", "Monte Carlo rates of a placement")):
        p = sub.add_parser(name, parents=[common, run_opts], help=helptext)
        p.add_argument("--method", choices=METHODS, help="override the config method")
        if name == "evaluate":
            p.add_argument("--placement", help="placement.json to evaluate instead of computing one")
        p.set_defaults(func=cmd_place if name == "place" else cmd_evaluate)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, parents=[common, run_opts], help=f"run {name} (preset config unless --config)")
        p.set_defaults(func=cmd_experiment)
    p = sub.add_parser("oned", parents=[common], help="the 1-D four-AP study")
    p.set_defaults(func=cmd_oned)
    p = sub.add_parser("compare", parents=[common], help="improvement ratios between two rates.json files")
    p.add_argument("--new", required=True, help="rates.json of the candidate")
    p.add_argument("--base", required=True, help="rates.json of the baseline")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("mc_iters", "restarts"):
        v = getattr(args, name, None)
        if v is not None and v < 1:
            parser.error(f"--{name.replace('_', '-')} must be >= 1")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"cfplace: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"cfplace: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
