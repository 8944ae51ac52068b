"""Scenario-driven tasks and their file outputs.

Every output is a deterministic function of the scenario bytes and the
seeds: JSON is written with sorted keys, floats in CSV use 17 significant
digits, and nothing records wall-clock time.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import ConditionProbe, condition_report, necessity_stats
from .lyapunov import PotentialField, build_grid_2d, drift_estimate, drift_margin, probe_points
from .queueing import RNG_ALGORITHM, simulate
from .scenario import Scenario, build_policy, load_scenario, resolve_load
from .stability import classify, plot_data_csv

TOOL = "qsched"


def dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def simulate_seed(sc: Scenario, seed: int, out: Path, with_necessity: bool = True) -> dict:
    """Simulate one seed and write its trace, stability report and plot data."""
    am, _ = resolve_load(sc)
    policy = build_policy(sc, am)
    trace = simulate(sc.channel, am, policy, sc.observation, sc.horizon, seed,
                     q0=sc.q0, scenario_hash=sc.sha256)
    nec = necessity_stats(trace, sc.necessity.eps, sc.necessity.bounded_threshold, sc.necessity.norm)
    st = sc.stability
    # f defaults to ||q||_1 for trace classification
    report = classify(trace, None, st.occupation_bound, st.slope_tol, st.window_fraction,
                      nec if with_necessity else None) if sc.horizon >= 1000 else None
    trace_path = out / "traces" / f"trace_seed{seed}.csv"
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(trace_path)
    entry = {"seed": seed, "trace": str(trace_path.relative_to(out)), "q_final": trace.q_final.tolist()}
    if report is not None:
        rep = {"scenario_hash": sc.sha256, "seed": seed, "policy": policy.describe(), **report.to_dict()}
        dump_json(rep, out / "reports" / f"stability_seed{seed}.json")
        plot = out / "plots" / f"plot_seed{seed}.csv"
        plot.parent.mkdir(parents=True, exist_ok=True)
        plot.write_text(plot_data_csv(trace))
        entry.update(verdict=report.verdict, slope=report.slope, slope_stderr=report.slope_stderr,
                     report=str((out / "reports" / f"stability_seed{seed}.json").relative_to(out)))
    else:
        entry.update(verdict="not classified (horizon < 1000)")
    if with_necessity:
        dump_json({"scenario_hash": sc.sha256, "seed": seed, **nec.to_dict()},
                  out / "reports" / f"necessity_seed{seed}.json")
        entry["necessity"] = nec.to_dict()
    return entry


def _job(args):
    path, seeds, seed, out, nec = args
    sc = load_scenario(path).with_seeds(seeds)
    return simulate_seed(sc, seed, Path(out), nec)


def run_simulations(sc: Scenario, out: Path, jobs: int = 1, with_necessity: bool = True) -> list[dict]:
    """One job per seed; results come back in seed-list order whatever the job count."""
    if jobs <= 1 or len(sc.seeds) == 1:
        return [simulate_seed(sc, s, out, with_necessity) for s in sc.seeds]
    args = [(str(sc.path), sc.seeds, s, str(out), with_necessity) for s in sc.seeds]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_job, args))


def run_conditions(sc: Scenario, out: Path) -> dict:
    am, _ = resolve_load(sc)
    policy = build_policy(sc, am)
    c = sc.conditions
    probe = ConditionProbe(c.levels, c.samples_per_level, c.perturbation_bound,
                           c.bounded_threshold, c.seed, c.norm)
    rep = condition_report(policy, probe, sc.M, c.eps1, c.eps2).to_dict()
    rep["scenario_hash"] = sc.sha256
    dump_json(rep, out / "reports" / "conditions.json")
    return {"report": "reports/conditions.json", "verdicts": rep["verdicts"]}


def run_lyapunov(sc: Scenario, out: Path) -> dict:
    """Drift probes with the chosen potential; a grid export when a grid region is configured."""
    am, _ = resolve_load(sc)
    policy = build_policy(sc, am)
    ly = sc.lyapunov
    result: dict = {}
    grid = None
    if ly.grid_base is not None:
        grid = build_grid_2d(policy, ly.grid_base, ly.grid_extent, ly.init_cell)
        dump_json(grid.to_dict(), out / "reports" / "grid.json")
        result["grid"] = {"export": "reports/grid.json", "max_loop_residual": grid.max_loop_residual,
                          "max_two_path_gap": grid.max_two_path_gap}
    potential = PotentialField.from_grid(grid) if ly.potential == "grid" else PotentialField.ray(policy, ly.quadrature_steps)
    probes = probe_points(sc.M, ly.drift_probe_norms, ly.drift_probes, ly.drift_seed)
    seeds = np.random.SeedSequence(ly.drift_seed).generate_state(len(probes))
    est = [drift_estimate(policy, sc.channel, am, q, potential, ly.drift_samples, int(s))
           for q, s in zip(probes, seeds)]
    rep = {"scenario_hash": sc.sha256, "potential": potential.kind, "steps": potential.steps,
           "probes": [e.to_dict() for e in est], "theta_3se": drift_margin(est)}
    dump_json(rep, out / "reports" / "drift.json")
    result["drift"] = {"report": "reports/drift.json", "theta_3se": rep["theta_3se"]}
    return result


def summary_header(sc: Scenario) -> dict:
    _, load = resolve_load(sc)
    return {
        "tool": TOOL,
        "version": __version__,
        "scenario": sc.name,
        "scenario_hash": sc.sha256,
        "rng_algorithm": RNG_ALGORITHM,
        "seeds": list(sc.seeds),
        "horizon": sc.horizon,
        "policy": sc.policy_name,
        "load": load.to_dict(),
    }


def run(sc: Scenario, out: Path, tasks, jobs: int = 1) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary_header(sc)
    summary["tasks"] = list(tasks)
    if "simulate" in tasks or "necessity" in tasks:
        summary["simulations"] = run_simulations(sc, out, jobs, with_necessity=True)
    if "conditions" in tasks:
        summary["conditions"] = run_conditions(sc, out)
    if "lyapunov" in tasks:
        summary["lyapunov"] = run_lyapunov(sc, out)
    dump_json(summary, out / "summary.json")
    return summary
