"""Command-line entry point: ``evpricing {run,optimize,compare,omega-sweep}``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .choice import ChoiceConfig
from .economics import PriceBoundError, PriceSchedule, fixed_schedule, tou_schedule
from .optimizer import (
    CemConfig,
    HorizonResult,
    PriceBoundViolation,
    TraceRow,
    rolling_horizon,
    simulate_schedule,
)
from .scenario import Scenario, ScenarioError, bundled_scenario_path, load_scenario

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NONCONVERGED = 0, 1, 2, 3
DEFAULT_OMEGAS = (0.1, 0.3, 0.5, 0.7, 0.9)
TOTAL_KEYS = ("total_ev_utility", "total_cs_revenue", "total_queue_penalty", "total_PI")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for validation errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    v = round(float(x), 6)
    return f"{v + 0.0:.6f}"  # + 0.0 folds -0.0 into 0.0


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# setup


def resolve_scenario(arg: str) -> Scenario:
    p = Path(arg)
    if not p.exists() and not arg.endswith(".json"):
        try:
            p = bundled_scenario_path(arg)
        except FileNotFoundError:
            raise ScenarioError(f"no scenario file or bundled scenario named {arg!r}") from None
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {arg}")
    return load_scenario(p)


def _seeded(scenario: Scenario, seed) -> Scenario:
    return scenario if seed is None else replace(scenario, seed=int(seed))


def choice_config(scenario: Scenario, mode: str | None) -> ChoiceConfig:
    base = scenario.choice or ChoiceConfig()
    return base if mode is None else replace(base, mode=mode)


def cem_config(scenario: Scenario, args) -> CemConfig:
    base = scenario.cem or CemConfig()
    overrides = {}
    for name in ("population", "elite_ratio", "smoothing", "tolerance", "max_iters", "psa_threshold",
                 "psa_frequency", "psa_mode", "sigma_min", "sigma_max", "window_hours"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "warm_start", False):
        overrides["warm_start"] = True
    if args.seed is not None:
        overrides["seed"] = int(args.seed)
    overrides["threads"] = args.threads
    return replace(base, **overrides)


def with_omega(scenario: Scenario, omega) -> Scenario:
    if omega is None:
        return scenario
    return replace(scenario, econ=replace(scenario.econ, omega=float(omega)))


# ---------------------------------------------------------------------------
# reports


def hourly_rows(scenario: Scenario, result: HorizonResult):
    ids = [st.id for st in scenario.stations]
    header = ["hour"]
    for tag in ("price", "lambda", "wait", "rejected"):
        header += [f"{tag}_{i}" for i in ids]
    header += ["queue_penalty", "ev_utility", "cs_revenue", "PI"]
    rows = []
    for o in result.outcomes:
        eq, bd = o.equilibrium, o.breakdown
        row = [o.hour]
        row += [float(v) for v in o.prices]
        row += [float(v) for v in eq.arrival_rates]
        row += [float(v) for v in eq.waits]
        row += [float(v) for v in eq.rejected]
        row += [bd.queue_penalty, bd.ev_utility_total, bd.cs_revenue, bd.performance_index]
        rows.append(row)
    return header, rows


def rounded_totals(result: HorizonResult) -> dict[str, float]:
    """Totals summed from the 6-decimal hourly values, so they re-add exactly from hourly.csv."""
    cols = {
        "total_queue_penalty": [o.breakdown.queue_penalty for o in result.outcomes],
        "total_ev_utility": [o.breakdown.ev_utility_total for o in result.outcomes],
        "total_cs_revenue": [o.breakdown.cs_revenue for o in result.outcomes],
        "total_PI": [o.breakdown.performance_index for o in result.outcomes],
    }
    return {k: round(sum(float(fmt(v)) for v in vals), 6) for k, vals in cols.items()}


def write_run_report(out: Path, scenario: Scenario, result: HorizonResult, meta: dict) -> dict:
    header, rows = hourly_rows(scenario, result)
    write_csv(out / "hourly.csv", header, rows)
    doc = dict(rounded_totals(result))
    doc["metadata"] = meta
    doc["non_converged_windows"] = list(result.non_converged)
    doc["non_converged_hours"] = [o.hour for o in result.outcomes if not o.equilibrium.converged]
    doc["price_bounds_ok"] = result.audit.feasible
    write_json(out / "totals.json", doc)
    return doc


def write_trace(path: Path, trace: list[TraceRow]) -> None:
    rows = [
        [r.window, r.iteration, float(r.best), float(r.mean), float(r.elite_min), float(r.elite_max),
         float(r.mean_sigma), r.active_count]
        for r in trace
    ]
    write_csv(path, ["window", "iteration", "best", "mean", "elite_min", "elite_max", "mean_sigma", "active_count"], rows)


def render_svg(trace: list[TraceRow], width: int = 720, height: int = 360) -> str:
    """Per-window best-F against iteration, one polyline per window."""
    pad = 48
    by_window: dict[int, list[tuple[int, float]]] = {}
    for r in trace:
        by_window.setdefault(r.window, []).append((r.iteration, float(r.best)))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">'
        "best F per window</text>",
    ]
    if by_window:
        xs = [i for pts in by_window.values() for i, _ in pts]
        ys = [v for pts in by_window.values() for _, v in pts]
        x0, x1 = min(xs), max(max(xs), min(xs) + 1)
        y0, y1 = min(ys), max(ys)
        if y1 - y0 < 1e-12:
            y0, y1 = y0 - 1.0, y1 + 1.0

        def sx(v):
            return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

        def sy(v):
            return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

        parts.append(
            f'<polyline points="{pad},{pad} {pad},{height - pad} {width - pad},{height - pad}" '
            'fill="none" stroke="black" stroke-width="1"/>'
        )
        parts.append(f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{y1:.3g}</text>')
        parts.append(f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-family="sans-serif" font-size="10">{y0:.3g}</text>')
        parts.append(f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" font-family="sans-serif" font-size="11">iteration</text>')
        n = len(by_window)
        for k, (w, pts) in enumerate(sorted(by_window.items())):
            hue = int(360 * k / max(n, 1))
            coords = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in pts)
            parts.append(f'<polyline points="{coords}" fill="none" stroke="hsl({hue},70%,40%)" stroke-width="1.2">'
                         f"<title>window {w}</title></polyline>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _meta(args, scenario: Scenario, strategy: str, choice: ChoiceConfig) -> dict:
    return {"seed": scenario.seed, "mode": choice.mode, "strategy": strategy, "omega": scenario.econ.omega}


def _log_time(label: str, t0: float) -> None:
    # wall time stays out of the output files so they remain byte-identical across runs
    print(f"{label}: {time.perf_counter() - t0:.2f}s", file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


def baseline_schedule(scenario: Scenario, args, strategy: str) -> PriceSchedule:
    if strategy == "fixed":
        return fixed_schedule(scenario, args.price_level)
    if strategy == "tou":
        peak_hours = range(args.peak_start, args.peak_end + 1)
        return tou_schedule(scenario, peak_hours=peak_hours, peak=args.peak_price, offpeak=args.offpeak_price)
    raise UsageError(f"unknown strategy {strategy!r}")


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    scenario = with_omega(_seeded(resolve_scenario(args.scenario), args.seed), args.omega)
    choice = choice_config(scenario, args.choice)
    if args.pricing == "dynamic-file":
        if not args.schedule:
            raise UsageError("--pricing dynamic-file requires --schedule PATH")
        try:
            doc = json.loads(Path(args.schedule).read_text(encoding="utf-8"))
            schedule = PriceSchedule.from_dict(doc)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ScenarioError(f"cannot read schedule {args.schedule}: {exc}") from None
    else:
        schedule = baseline_schedule(scenario, args, args.pricing)
    result = simulate_schedule(scenario, schedule, choice=choice)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = write_run_report(out, scenario, result, _meta(args, scenario, args.pricing, choice))
    _log_time("run", t0)
    if args.strict and doc["non_converged_hours"]:
        return EXIT_NONCONVERGED
    return EXIT_OK


def _optimize(scenario: Scenario, args, choice: ChoiceConfig) -> HorizonResult:
    config = cem_config(scenario, args)
    verbose = getattr(args, "verbose", False)

    def progress(w):
        if verbose:
            print(f"window {w.start}: best {w.best_score:.4f} ({len(w.trace)} iters)", file=sys.stderr)

    return rolling_horizon(scenario, config=config, choice=choice, progress=progress)


def cmd_optimize(args) -> int:
    t0 = time.perf_counter()
    scenario = with_omega(_seeded(resolve_scenario(args.scenario), args.seed), args.omega)
    choice = choice_config(scenario, args.choice)
    result = _optimize(scenario, args, choice)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "prices.json", result.schedule.to_dict())
    write_trace(out / "trace.csv", result.trace)
    (out / "report.svg").write_text(render_svg(result.trace), encoding="utf-8")
    doc = write_run_report(out, scenario, result, _meta(args, scenario, "dynamic", choice))
    _log_time("optimize", t0)
    if args.strict and (doc["non_converged_windows"] or doc["non_converged_hours"]):
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_compare(args) -> int:
    t0 = time.perf_counter()
    scenario = with_omega(_seeded(resolve_scenario(args.scenario), args.seed), args.omega)
    choice = choice_config(scenario, "mnl_msa")
    rows, flagged = [], False
    for strategy in ("fixed", "tou"):
        res = simulate_schedule(scenario, baseline_schedule(scenario, args, strategy), choice=choice)
        rows.append([strategy] + [rounded_totals(res)[k] for k in TOTAL_KEYS])
    res = _optimize(scenario, args, choice)
    flagged = bool(res.non_converged)
    rows.append(["dynamic"] + [rounded_totals(res)[k] for k in TOTAL_KEYS])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "compare.csv", ["strategy", *TOTAL_KEYS], rows)
    _log_time("compare", t0)
    return EXIT_NONCONVERGED if (args.strict and flagged) else EXIT_OK


def parse_omegas(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--omegas must be a comma-separated list of numbers, got {text!r}") from None
    if not vals:
        raise UsageError("--omegas is empty")
    bad = [v for v in vals if not 0.0 <= v <= 1.0]
    if bad:
        raise ScenarioError(f"omega values must lie in [0, 1]: {bad}")
    return vals


def cmd_omega_sweep(args) -> int:
    t0 = time.perf_counter()
    omegas = parse_omegas(args.omegas) if args.omegas else list(DEFAULT_OMEGAS)
    base = _seeded(resolve_scenario(args.scenario), args.seed)
    choice = choice_config(base, args.choice)
    rows, flagged = [], False
    for w in omegas:
        scenario = with_omega(base, w)
        res = _optimize(scenario, args, choice)
        flagged |= bool(res.non_converged)
        tot = rounded_totals(res)
        R, U = tot["total_cs_revenue"], tot["total_ev_utility"]
        rows.append([float(w), float(res.schedule.prices.mean()), R, U, tot["total_PI"], R + U])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "omega_sweep.csv", ["omega", "avg_price", "R_CS", "U_EV", "PI", "system_utility"], rows)
    _log_time("omega-sweep", t0)
    return EXIT_NONCONVERGED if (args.strict and flagged) else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario JSON path or bundled name (desk, clayton_synthetic)")
    p.add_argument("--seed", type=int, default=None, help="overrides the scenario seed and the CEM seed")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--strict", action="store_true", help="exit 3 if any window or equilibrium fails to converge")
    p.add_argument("--omega", type=float, default=None, help="revenue weight in the performance index")


def _baseline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--price-level", type=float, default=0.5, help="fixed price, $/kWh")
    p.add_argument("--peak-price", type=float, default=0.6)
    p.add_argument("--offpeak-price", type=float, default=0.3)
    p.add_argument("--peak-start", type=int, default=8)
    p.add_argument("--peak-end", type=int, default=17, help="last peak hour, inclusive")


def _cem_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("optimizer")
    g.add_argument("--population", type=int)
    g.add_argument("--elite-ratio", type=float)
    g.add_argument("--smoothing", type=float)
    g.add_argument("--tolerance", type=float)
    g.add_argument("--max-iters", type=int)
    g.add_argument("--psa-threshold", type=float)
    g.add_argument("--psa-frequency", type=int)
    g.add_argument("--psa-mode", choices=("exact", "cached"))
    g.add_argument("--sigma-min", type=float)
    g.add_argument("--sigma-max", type=float)
    g.add_argument("--window-hours", type=int)
    g.add_argument("--warm-start", action="store_true")
    g.add_argument("-v", "--verbose", action="store_true")


CHOICES = ("dc", "mnl", "msa")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evpricing", description="Dynamic EV charging price optimisation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate a price schedule")
    _common(p)
    p.add_argument("--pricing", choices=("fixed", "tou", "dynamic-file"), default="fixed")
    p.add_argument("--schedule", help="prices.json for --pricing dynamic-file")
    p.add_argument("--choice", choices=CHOICES, default=None)
    _baseline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("optimize", help="run the rolling-horizon optimizer")
    _common(p)
    p.add_argument("--choice", choices=CHOICES, default=None)
    _cem_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("compare", help="fixed vs ToU vs dynamic under the MSA follower")
    _common(p)
    _baseline_flags(p)
    _cem_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("omega-sweep", help="optimize once per revenue weight")
    _common(p)
    p.add_argument("--omegas", default=None, help="comma-separated list, default 0.1,0.3,0.5,0.7,0.9")
    p.add_argument("--choice", choices=CHOICES, default=None)
    _cem_flags(p)
    p.set_defaults(func=cmd_omega_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"evpricing: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, PriceBoundError, PriceBoundViolation, ValueError) as exc:
        print(f"evpricing: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
