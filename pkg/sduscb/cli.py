"""
SD-USCB command line.

Commands:
  build-ckm        - Build one CKM per BS over the scenario's user corridors
  simulate         - Run the epoch loop, write trace.csv / summary.json / pfr_curve.csv
  verify-theorem1  - Monte Carlo check of the SALINR vs SLINR error bounds
  bench-bf         - Per-user beamformer update time vs N_t, Woodbury on/off
  sweep            - simulate over seeds x variants, write sweep.csv

Usage:
  sd-uscb simulate --config data/desk_scenario.toml --out out/desk
  sd-uscb simulate --config data/desk_scenario.toml --baseline zero-leakage
  sd-uscb verify-theorem1 --M 20 --s 2 5 10 --draws 100000
  sd-uscb bench-bf --out out/bench
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ckm as ckm_mod
from . import config
from .beamforming import (
    DualVars,
    FpAux,
    direct_apply,
    random_problem,
    update_operands,
    update_xi,
    update_zeta,
    woodbury_apply,
)
from .errors import ScenarioError, SdUscbError, TheoremInputError
from .metrics import theorem1_mc
from .simulator import build_ckms, ckm_path, prepare, run, write_outputs

logger = logging.getLogger(__name__)

VALIDATION_ERRORS = (ScenarioError, TheoremInputError)


class UsageError(SdUscbError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def save_report(command: str, content: str, report_dir: Optional[Path] = None) -> Path:
    """Save a run report to a timestamped markdown file."""
    report_dir = Path(report_dir or config.REPORT_DIR)
    report_dir.mkdir(parents=True, exist_ok=True)
    now = datetime.now(timezone.utc)
    filepath = report_dir / f"sd-uscb_{command}_{now.strftime('%Y-%m-%d_%H%M%S')}.md"
    filepath.write_text(
        f"""# SD-USCB {command} Report
**Generated:** {now.strftime("%Y-%m-%d %H:%M UTC")}

---

{content}
"""
    )
    print(f"Report saved: {filepath}")
    return filepath


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _table(rows: Sequence[Tuple], header: Tuple[str, ...]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines)


def _scenario(args) -> config.ScenarioConfig:
    overrides: Dict[str, dict] = {}

    def put(table, key, value):
        if value is not None:
            overrides.setdefault(table, {})[key] = value

    put("simulation", "seed", getattr(args, "seed", None))
    put("simulation", "epochs", getattr(args, "epochs", None))
    put("simulation", "csi_source", getattr(args, "csi_source", None))
    put("solver", "baseline", getattr(args, "baseline", None))
    put("sensing", "c_bar", getattr(args, "sensing_threshold", None))
    put("scheduler", "variant", getattr(args, "scheduler", None))
    return config.load_scenario(args.config, overrides)


# --- commands ----------------------------------------------------------------

def cmd_build_ckm(args) -> int:
    sc = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"SD-USCB: building CKMs for {sc.network.n_cells} BSs ({sc.ckm.cell_size} m cells)...")
    start = time.perf_counter()
    state = prepare(sc.with_overrides({"simulation": {"csi_source": "oracle"}}), threads=args.threads)
    ckms, reports = build_ckms(state, progress=args.progress)
    rows, summaries = [], []
    for m, (ckm, report) in enumerate(zip(ckms, reports)):
        path = ckm_mod.save(ckm, ckm_path(out, m))
        s = report.summary()
        summaries.append({"bs": m, "path": str(path), **s})
        rows.append((m, s["n_cells"], f"{s['residual_mean']:.4g}", f"{s['residual_median']:.4g}",
                     f"{s['residual_max']:.4g}", path))
    (out / "ckm_report.json").write_text(json.dumps(summaries, indent=2))
    elapsed = time.perf_counter() - start
    save_report("build-ckm", "\n".join([
        "## CKM build",
        f"- Seed: {sc.simulation.seed}",
        f"- sigma_c^2: {state.sigma_c2:.6g} W",
        f"- Elapsed: {elapsed:.2f} s",
        "",
        _table(rows, ("BS", "cells", "mean residual", "median residual", "max residual", "file")),
    ]), args.report_dir)
    print(f"SD-USCB: CKM build complete ({elapsed:.2f} s).")
    return 0


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    print(f"SD-USCB: simulating {sc.simulation.epochs} epochs, {sc.network.n_cells} cells, "
          f"baseline {sc.solver.baseline}...")
    result = run(sc, threads=args.threads, progress=args.progress)
    paths = write_outputs(result, args.out)
    s = result.summary
    save_report("simulate", "\n".join([
        "## Simulation",
        f"- Baseline: {s['baseline']}, scheduler: {s['scheduler']}, CSI: {s['csi_source']}",
        f"- Seed: {s['seed']}, epochs: {s['epochs']}, c_bar: {s['c_bar']}",
        f"- Final accumulated PFR: {s['final_pfr']}",
        f"- Mean location error: {s['mean_location_error_m']:.4g} m",
        f"- Backhaul: {s['bytes_locations']} location bytes vs {s['bytes_full_csi']} full-CSI bytes",
        f"- Infeasible epochs: {s['infeasible_epochs']}, CKM misses: {s['ckm_misses']}",
        f"- Runtime: {s['runtime_s']:.2f} s",
        "",
        "## Outputs",
        *[f"- {k}: {v}" for k, v in paths.items()],
    ]), args.report_dir)
    print(f"SD-USCB: simulation complete, final PFR {s['final_pfr']}.")
    return 0


def cmd_verify_theorem1(args) -> int:
    t1 = config.load_scenario(args.config).theorem1 if args.config else config.Theorem1Table()
    defaults = dict(M=t1.M, s=list(t1.s_sizes), P=t1.P, sigma_c2=t1.sigma_c2, draws=t1.draws)
    params = {k: getattr(args, k) if getattr(args, k) is not None else v for k, v in defaults.items()}
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    print(f"SD-USCB: verifying the leakage bounds (M={params['M']}, draws={params['draws']:,})...")
    reports = [
        theorem1_mc(params["M"], s, params["P"], params["sigma_c2"], params["draws"], rng).to_dict()
        for s in params["s"]
    ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "theorem1.json"
    path.write_text(json.dumps({"seed": seed, "configurations": reports}, indent=2))
    rows = [(r["s_size"], f"{r['mean_abs_err_slinr']:.4g}", f"{r['bound_slinr']:.4g}",
             f"{r['mean_abs_err_salinr']:.4g}", f"{r['bound_salinr']:.4g}",
             "YES" if r["salinr_tighter"] else "NO") for r in reports]
    save_report("verify-theorem1", "\n".join([
        f"## Leakage approximation check (M={params['M']}, P={params['P']}, sigma^2={params['sigma_c2']})",
        "",
        _table(rows, ("|S|", "SLINR err", "SLINR bound", "SALINR err", "SALINR bound", "SALINR tighter")),
        "",
        f"Output: {path}",
    ]), args.report_dir)
    ok = all(r["bounds_hold"] for r in reports)
    print(f"SD-USCB: bounds {'hold' if ok else 'VIOLATED'} in {len(reports)} configurations.")
    if not ok:
        bad = [r["s_size"] for r in reports if not r["bounds_hold"]]
        print(f"error: bounds-violated: |S| in {bad}", file=sys.stderr)
        return 1
    return 0


BENCH_COLUMNS = ("n_tx", "n_users", "repeats", "woodbury", "per_user_s", "shared_inverse_s", "rel_diff")


def bench_update(n_tx: int, n_users: int, repeats: int, rng: np.random.Generator) -> List[dict]:
    """Time one dual-iteration beamformer update, Woodbury and direct."""
    problem = random_problem(n_tx, n_users, rng).normalized()
    V = problem.h / np.linalg.norm(problem.h, axis=0) / math.sqrt(n_users)
    xi = update_xi(V, problem)
    fp = FpAux(xi, update_zeta(V, xi, problem))
    base, A, Z, coef = update_operands(DualVars(1.0, np.ones(n_users)), fp, problem, V)

    def timed(fn):
        start = time.perf_counter()
        for _ in range(repeats):
            result = fn()
        return (time.perf_counter() - start) / repeats, result

    t_inv, B = timed(lambda: np.linalg.inv(base))
    t_wood, v_wood = timed(lambda: woodbury_apply(B, A, Z, coef))
    t_direct, v_direct = timed(lambda: direct_apply(base, A, Z, coef))
    diff = float(np.linalg.norm(v_wood - v_direct) / np.linalg.norm(v_direct))
    return [
        dict(n_tx=n_tx, n_users=n_users, repeats=repeats, woodbury=1,
             per_user_s=t_wood / n_users, shared_inverse_s=t_inv, rel_diff=diff),
        dict(n_tx=n_tx, n_users=n_users, repeats=repeats, woodbury=0,
             per_user_s=t_direct / n_users, shared_inverse_s=0.0, rel_diff=diff),
    ]


def cmd_bench_bf(args) -> int:
    sc = config.load_scenario(args.config) if args.config else config.ScenarioConfig()
    b = sc.bench
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    print(f"SD-USCB: benchmarking beamformer updates for N_t in {list(b.n_tx)}...")
    rows = [row for n in b.n_tx for row in bench_update(n, b.n_users, b.repeats, rng)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "timing.csv"
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r["n_tx"], r["n_users"], r["repeats"], r["woodbury"],
                        _fmt(r["per_user_s"]), _fmt(r["shared_inverse_s"]), _fmt(r["rel_diff"])])
    table = [(r["n_tx"], "on" if r["woodbury"] else "off", f"{r['per_user_s'] * 1e6:.2f}",
              f"{r['rel_diff']:.2e}") for r in rows]
    save_report("bench-bf", "\n".join([
        f"## Beamformer update timing ({b.n_users} users, {b.repeats} repeats)",
        "",
        _table(table, ("N_t", "Woodbury", "per-user us", "rel. diff")),
        "",
        f"Output: {path}",
    ]), args.report_dir)
    print("SD-USCB: benchmark complete.")
    return 0


SWEEP_COLUMNS = ("seed", "baseline", "c_bar", "final_pfr", "mean_pfr", "median_pfr", "runtime_s")


def _variants(baselines: Sequence[str], c_bars: Sequence[float], default_c_bar: float) -> List[Tuple[str, float]]:
    out = [(b, default_c_bar) for b in baselines]
    out += [("sd-uscb", c) for c in c_bars if ("sd-uscb", c) not in out]
    return out


def sweep_trends(rows: Sequence[dict]) -> dict:
    """Per-seed win counts of SD-USCB against the other variants."""
    by_seed: Dict[int, Dict[Tuple[str, float], dict]] = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[(r["baseline"], r["c_bar"])] = r
    wins: Dict[str, int] = {}
    best_c_bar: Dict[str, int] = {}
    for runs in by_seed.values():
        ours = [r for (b, _), r in runs.items() if b == "sd-uscb"]
        if not ours:
            continue
        for (b, c_bar), r in runs.items():
            ref = runs.get(("sd-uscb", c_bar))
            if b != "sd-uscb" and ref is not None:
                wins.setdefault(b, 0)
                wins[b] += int(ref["mean_pfr"] > r["mean_pfr"])
        if len(ours) > 1:
            best = max(ours, key=lambda r: r["median_pfr"])
            key = repr(best["c_bar"])
            best_c_bar[key] = best_c_bar.get(key, 0) + 1
    return {"seeds": len(by_seed), "sd_uscb_wins": wins, "best_c_bar_by_median": best_c_bar}


def cmd_sweep(args) -> int:
    base = _scenario(args)
    seeds = [base.simulation.seed + i for i in range(args.seeds)]
    variants = _variants(args.baselines, args.c_bars, base.sensing.c_bar)
    print(f"SD-USCB: sweeping {len(seeds)} seeds x {len(variants)} variants...")
    rows = []
    for seed in seeds:
        seeded = base.with_overrides({"simulation": {"seed": seed}})
        ckms = prepare(seeded, threads=args.threads).ckms
        for baseline, c_bar in variants:
            sc = seeded.with_overrides({"solver": {"baseline": baseline}, "sensing": {"c_bar": c_bar}})
            result = run(sc, threads=args.threads, ckms=ckms)
            curve = np.array(result.summary["pfr_curve"] or [math.nan])
            rows.append(dict(
                seed=seed, baseline=baseline, c_bar=c_bar,
                final_pfr=float(curve[-1]), mean_pfr=float(curve.mean()),
                median_pfr=float(np.median(curve)), runtime_s=result.summary["runtime_s"],
            ))
            logger.info("seed %d %s c_bar=%g: final PFR %.4f", seed, baseline, c_bar, curve[-1])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["seed"], r["baseline"], _fmt(r["c_bar"]), _fmt(r["final_pfr"]),
                        _fmt(r["mean_pfr"]), _fmt(r["median_pfr"]), _fmt(r["runtime_s"])])
    trends = sweep_trends(rows)
    (out / "sweep_summary.json").write_text(json.dumps({"runs": rows, "trends": trends}, indent=2))
    save_report("sweep", "\n".join([
        f"## Sweep over {len(seeds)} seeds",
        "",
        _table([(r["seed"], r["baseline"], r["c_bar"], f"{r['mean_pfr']:.4f}", f"{r['final_pfr']:.4f}")
                for r in rows], ("seed", "baseline", "c_bar", "mean PFR", "final PFR")),
        "",
        f"- SD-USCB wins: {trends['sd_uscb_wins']}",
        f"- Best c_bar by median PFR: {trends['best_c_bar_by_median']}",
        "",
        f"Output: {path}",
    ]), args.report_dir)
    print("SD-USCB: sweep complete.")
    return 0


# --- entry point -------------------------------------------------------------

COMMANDS: Dict[str, Tuple[str, Callable]] = {
    "build-ckm": ("Build per-BS channel knowledge maps", cmd_build_ckm),
    "simulate": ("Run the SD-USCB epoch loop", cmd_simulate),
    "verify-theorem1": ("Monte Carlo check of the leakage bounds", cmd_verify_theorem1),
    "bench-bf": ("Beamformer update timing vs N_t", cmd_bench_bf),
    "sweep": ("simulate over seeds x variants", cmd_sweep),
}


def _csv_floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sd-uscb", description="SD-USCB multi-cell ISAC simulator")
    parser.add_argument("--log-level", default=config.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    for name, (desc, func) in COMMANDS.items():
        p = sub.add_parser(name, help=desc, description=desc)
        p.set_defaults(func=func)
        needs_config = name in ("build-ckm", "simulate", "sweep")
        p.add_argument("--config", type=Path, default=None, required=needs_config, help="scenario TOML")
        p.add_argument("--out", type=Path, default=config.OUTPUT_DIR)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=config.THREADS)
        p.add_argument("--report-dir", type=Path, default=None)
        p.add_argument("--progress", action="store_true", help="show progress bars")
        if needs_config:
            p.add_argument("--baseline", choices=config.BASELINES, default=None)
            p.add_argument("--sensing-threshold", type=float, default=None, help="overrides c_bar")
            p.add_argument("--scheduler", choices=config.SCHEDULERS, default=None)
            p.add_argument("--csi-source", choices=config.CSI_SOURCES, default=None)
            p.add_argument("--epochs", type=int, default=None)
        if name == "verify-theorem1":
            p.add_argument("--M", type=int, default=None)
            p.add_argument("--s", type=int, nargs="+", default=None)
            p.add_argument("--P", type=float, default=None)
            p.add_argument("--sigma-c2", dest="sigma_c2", type=float, default=None)
            p.add_argument("--draws", type=int, default=None)
        if name == "sweep":
            p.add_argument("--seeds", type=int, default=5, help="number of seeds from --seed")
            p.add_argument("--baselines", type=lambda s: [b for b in s.split(",") if b],
                           default=list(config.BASELINES))
            p.add_argument("--c-bars", type=_csv_floats, default=[0.01, 1.0, 10.0])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI entry point."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        if args.command is None:
            print("SD-USCB multi-cell ISAC simulator")
            print("=" * 40)
            print("\nCommands:")
            for cmd, (desc, _) in COMMANDS.items():
                print(f"  {cmd:16s} - {desc}")
            print("\nUsage: sd-uscb <command> [--config PATH] [--out DIR] [--seed N]")
            raise UsageError("a command is required")
        if getattr(args, "baselines", None):
            bad = [b for b in args.baselines if b not in config.BASELINES]
            if bad:
                raise UsageError(f"unknown baseline(s) {bad}")
        return args.func(args)
    except SdUscbError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 2 if isinstance(e, VALIDATION_ERRORS + (UsageError,)) else 1
