"""Experiment orchestration: gamma sweeps, multi-seed batches, file emission.

Output layout per scenario::

    out/<name>/<gamma>/<seed>/trajectory.csv   one chain + running average
    out/<name>/<gamma>/<seed>/diag.jsonl       per-run diagnostic records
    out/<name>/model_diag.jsonl                model-level records (drift, ...)
    out/<name>/summary.csv                     per-gamma aggregates + flags

Numeric CSV content is byte-reproducible: floats are written with repr and
every run derives its stream from (master_seed, gamma index, seed).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, build_model, draw_initial_point, validate_config
from .diagnostics import (
    cesaro_occupation,
    drift_check,
    linear_regularity_estimate,
    psi_growth_probe,
    shadowing,
    wilson_interval,
)
from .di_reference import locate_zero, semiflow_to_csv, solve_di
from .errors import (
    FbmmError,
    InconclusiveError,
    NoConvergenceError,
    NumericalFailureError,
    UnsupportedOperatorError,
)
from .fb_engine import run_chain, trajectory_to_csv
from .operators import AffineAtom
from .random_model import validate_l2_representation
from .sets import FullSpace

__all__ = ["RunRecord", "ScenarioResult", "run_scenario", "DRIFT_MARGIN_TOL"]

DRIFT_MARGIN_TOL = 1e-8


def _fmt(v):
    return repr(float(v))


@dataclass
class RunRecord:
    gamma: float
    gamma_index: int
    seed: int
    directory: Path
    ok: bool = True
    failure_index: int | None = None
    cesaro_dist: float | None = None
    occupation: dict = field(default_factory=dict)  # eps -> (outside, total)
    shadow_sup: float | None = None


@dataclass
class ScenarioResult:
    out_dir: Path
    summary_path: Path
    runs: list
    flags: dict
    all_failed: bool
    model_records: list


def _run_one(model, cfg, gamma, gamma_index, seed, run_dir, semiflow_cache, semiflow_lock):
    diag = cfg.diagnostics
    rec = RunRecord(gamma=gamma, gamma_index=gamma_index, seed=seed, directory=run_dir)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, gamma_index, seed]))
    x0 = draw_initial_point(cfg.init, rng, cfg.dimension)
    run_dir.mkdir(parents=True, exist_ok=True)
    records = []
    try:
        traj = run_chain(model, gamma, cfg.n_steps, x0, seed=seed, rng=rng, gamma0=cfg.gamma0)
    except NumericalFailureError as err:
        rec.ok = False
        rec.failure_index = err.step_index
        if err.partial is not None:
            trajectory_to_csv(err.partial, run_dir / "trajectory.csv")
        records.append({"type": "failure", "step_index": err.step_index, "message": str(err)})
        _write_jsonl(run_dir / "diag.jsonl", records)
        return rec

    trajectory_to_csv(traj, run_dir / "trajectory.csv")

    if model.x_star is not None:
        rec.cesaro_dist = float(np.linalg.norm(traj.cesaro - model.x_star))
        records.append({"type": "cesaro", "distance": rec.cesaro_dist, "n_steps": cfg.n_steps})
        if traj.is_dense:
            for eps in diag.occupation_eps:
                frac = cesaro_occupation(traj, model.x_star, eps)
                outside = int(round(frac * (cfg.n_steps + 1)))
                rec.occupation[float(eps)] = (outside, cfg.n_steps + 1)
                records.append({"type": "occupation", "eps": float(eps), "fraction": frac})
        elif diag.occupation_eps:
            records.append(
                {"type": "note", "message": "occupation skipped: trajectory stored with thinning"}
            )

    if diag.shadowing:
        try:
            key = tuple(np.round(x0, 12))
            with semiflow_lock:
                flow = semiflow_cache.get(key)
            if flow is None:
                flow = solve_di(model, x0, diag.shadow_t, diag.shadow_h, tol=diag.shadow_tol)
                with semiflow_lock:
                    if key not in semiflow_cache:
                        idx = sum(1 for k in semiflow_cache if k != "_dir")
                        flow_dir = semiflow_cache["_dir"]
                        flow_dir.mkdir(parents=True, exist_ok=True)
                        semiflow_to_csv(
                            flow,
                            flow_dir / f"semiflow_{idx}.csv",
                            flow_dir / f"semiflow_{idx}.json",
                        )
                        semiflow_cache[key] = flow
                    flow = semiflow_cache[key]
            report = shadowing(model, traj, flow, diag.shadow_t, diag.shadow_n_max)
            rec.shadow_sup = report.sup_dist
            records.append(report.to_json_dict())
        except NoConvergenceError as err:
            records.append(
                {"type": "shadow_failure", "message": str(err), "residual": err.residual}
            )

    _write_jsonl(run_dir / "diag.jsonl", records)
    return rec


def _write_jsonl(path, records):
    with open(path, "w", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _sample_drift_points(model, cfg, count, radius):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 7777]))
    center = model.x_star
    pts = center + radius * rng.standard_normal((count, cfg.dimension))
    return np.vstack([center[None, :], pts])


def _model_level_records(model, cfg):
    """Drift sweeps, growth probe, regularity estimate; returns (records, flag_data)."""
    diag = cfg.diagnostics
    records = []
    flag_data = {}
    if diag.drift and model.x_star is not None and model.phi is not None:
        margins = {}
        pts = _sample_drift_points(model, cfg, diag.drift_samples, diag.drift_radius)
        for g in diag.drift_gammas:
            res = [drift_check(model, g, x) for x in pts]
            margins[float(g)] = np.array([r.margin for r in res])
            records.extend(r.to_json_dict() for r in res)
            worst = min(res, key=lambda r: r.margin)
            records.append(
                {
                    "type": "drift_sweep",
                    "gamma": float(g),
                    "samples": len(res),
                    "min_margin": float(worst.margin),
                    "worst_x": [float(v) for v in worst.x],
                    "c_explicit": worst.c_explicit,
                }
            )
        flag_data["drift_margins"] = margins
    if diag.psi_growth and model.is_finite_support and model.phi is not None:
        probe = psi_growth_probe(
            model,
            gamma_grid=diag.growth_gamma_grid,
            radii=diag.growth_radii,
            n_directions=diag.growth_directions,
            seed=cfg.master_seed,
        )
        records.append(probe.to_json_dict())
        flag_data["growth_probe"] = probe
    if diag.regularity and model.is_finite_support:
        sets, weights = [], []
        for sa in model.support.atoms:
            if not isinstance(sa.domain, FullSpace):
                sets.append(sa.domain)
                weights.append(sa.weight)
        if sets:
            try:
                est, info = linear_regularity_estimate(
                    sets,
                    weights,
                    (diag.regularity_low, diag.regularity_high),
                    diag.regularity_samples,
                    seed=cfg.master_seed,
                    feasible_point=cfg.measure.get("feasible_point"),
                    return_info=True,
                )
                records.append(
                    {"type": "regularity", "estimate": est, **info,
                     "box": [diag.regularity_low, diag.regularity_high]}
                )
                flag_data["regularity"] = est
            except InconclusiveError as err:
                records.append({"type": "regularity", "estimate": None, "note": str(err)})
    if not model.domain_certified:
        records.append(
            {
                "type": "note",
                "message": "sampler measure: essential domain is scenario-declared, not certified",
            }
        )
    approx = [i for i, sa in enumerate(model.support.atoms) if getattr(sa.a, "approximate_section", False)] if model.is_finite_support else []
    if approx:
        records.append(
            {
                "type": "note",
                "message": "least-norm sections for oracle atoms use a 1e-8 Yosida step (approximate)",
                "atoms": approx,
            }
        )
    return records, flag_data


def _mean_sym_eigmin(model):
    h_bar = None
    for sa in model.support.atoms:
        if not isinstance(sa.a, AffineAtom):
            return None
        h_bar = sa.weight * sa.a.h if h_bar is None else h_bar + sa.weight * sa.a.h
    return float(np.linalg.eigvalsh(0.5 * (h_bar + h_bar.T)).min())


def _quantiles(vals):
    arr = np.asarray(vals, dtype=float)
    return float(np.quantile(arr, 0.1)), float(np.quantile(arr, 0.9))


def _summary_rows(cfg, model, runs, flag_data):
    """Aggregate per-gamma metrics and evaluate the sweep assertions."""
    rows = []
    flags = {}
    by_gamma = {}
    for r in runs:
        by_gamma.setdefault(r.gamma, []).append(r)
    gammas = sorted(by_gamma, reverse=True)

    cesaro_means = {}
    occupied = {}
    shadow_medians = {}
    for g in gammas:
        ok_runs = [r for r in by_gamma[g] if r.ok]
        if not ok_runs:
            continue
        dists = [r.cesaro_dist for r in ok_runs if r.cesaro_dist is not None]
        if dists:
            arr = np.asarray(dists)
            mean = float(arr.mean())
            se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            q10, q90 = _quantiles(arr)
            rows.append((g, "cesaro_dist", mean, q10, q90, mean - 1.96 * se, mean + 1.96 * se))
            cesaro_means[g] = mean
        for eps in cfg.diagnostics.occupation_eps:
            eps = float(eps)
            pairs = [r.occupation.get(eps) for r in ok_runs if eps in r.occupation]
            if not pairs:
                continue
            outside = sum(p[0] for p in pairs)
            total = sum(p[1] for p in pairs)
            frac = outside / total
            lo, hi = wilson_interval(outside, total)
            per_run = [p[0] / p[1] for p in pairs]
            q10, q90 = _quantiles(per_run)
            rows.append((g, f"occupation_eps_{eps:g}", frac, q10, q90, lo, hi))
            occupied.setdefault(eps, {})[g] = (outside, total, lo, hi)
        sups = [r.shadow_sup for r in ok_runs if r.shadow_sup is not None]
        if sups:
            arr = np.asarray(sups)
            q10, q90 = _quantiles(arr)
            med = float(np.median(arr))
            se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            mean = float(arr.mean())
            rows.append((g, "shadow_sup", mean, q10, q90, mean - 1.96 * se, mean + 1.96 * se))
            rows.append((g, "shadow_sup_median", med, q10, q90, "", ""))
            shadow_medians[g] = med

    for g, margins in sorted(flag_data.get("drift_margins", {}).items(), reverse=True):
        q10, q90 = _quantiles(margins)
        rows.append((g, "drift_min_margin", float(margins.min()), q10, q90, "", ""))
    if "drift_margins" in flag_data:
        worst = min(float(m.min()) for m in flag_data["drift_margins"].values())
        flags["drift_nonneg"] = worst >= -DRIFT_MARGIN_TOL

    if "regularity" in flag_data:
        rows.append(("all", "linear_regularity_lb", flag_data["regularity"], "", "", "", ""))

    probe = flag_data.get("growth_probe")
    if probe is not None:
        for r, ratio in probe.min_ratio_quad.items():
            rows.append(("all", f"psi_growth_ratio_quad_r{r:g}", ratio, "", "", "", ""))
        rows.append(("all", "psi_growth_exponent", probe.exponent, "", "", "", ""))
        eigmin = _mean_sym_eigmin(model)
        if eigmin is not None:
            floor = 0.1 * eigmin
            flags["growth_floor"] = min(probe.min_ratio_quad.values()) > floor
            rows.append(("all", "psi_growth_floor", floor, "", "", "", ""))

    if cfg.diagnostics.ergodic and len(gammas) >= 2 and cesaro_means:
        g_small, g_large = min(cesaro_means), max(cesaro_means)
        if g_small != g_large:
            flags["cesaro_monotone"] = cesaro_means[g_small] < cesaro_means[g_large]
    for eps, per_gamma in occupied.items():
        if len(per_gamma) >= 2:
            g_small, g_large = min(per_gamma), max(per_gamma)
            k_s, n_s, lo_s, hi_s = per_gamma[g_small]
            k_l, n_l, lo_l, hi_l = per_gamma[g_large]
            flags[f"occupation_monotone_eps_{eps:g}"] = (
                k_s / n_s < k_l / n_l and hi_s < lo_l
            )
    if len(shadow_medians) >= 2:
        meds = [shadow_medians[g] for g in sorted(shadow_medians, reverse=True)]
        flags["shadow_monotone"] = all(a > b for a, b in zip(meds, meds[1:]))

    for name in sorted(flags):
        rows.append(("all", f"flag_{name}", 1.0 if flags[name] else 0.0, "", "", "", ""))
    return rows, flags


def _write_summary(path, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write("gamma,metric,mean,q10,q90,ci_lo,ci_hi\n")
        for row in rows:
            out = []
            for v in row:
                if isinstance(v, str):
                    out.append(v)
                else:
                    out.append(_fmt(v))
            fh.write(",".join(out) + "\n")


def run_scenario(cfg: ScenarioConfig, out_dir, jobs=1, skip_chains=False) -> ScenarioResult:
    """Execute a scenario sweep and write its result bundle under ``out_dir``.

    Validates the config and the model's witness data first, then runs every
    (gamma, seed) chain (concurrently up to ``jobs``), and finally writes the
    per-gamma summary with the sweep assertion flags.
    """
    validate_config(cfg)
    model = build_model(cfg)
    if model.is_finite_support and model.x_star is not None and model.phi is not None:
        validate_l2_representation(model)
    witness_record = None
    needs_witness = cfg.diagnostics.ergodic or cfg.diagnostics.occupation_eps
    if model.x_star is None and needs_witness and model.is_finite_support and not skip_chains:
        # distance targets need a witness; locate one from the mean flow
        try:
            start = draw_initial_point(cfg.init, np.random.default_rng(cfg.master_seed), cfg.dimension)
            found = locate_zero(model, start, tol=1e-2, h=0.02)
            model.x_star = np.asarray(found, dtype=float)
            witness_record = {
                "type": "located_witness",
                "x_star": [float(v) for v in found],
                "note": "no declared witness; using the long-horizon flow average (tol 1e-2)",
            }
        except (NoConvergenceError, UnsupportedOperatorError):
            witness_record = {
                "type": "note",
                "message": "no witness declared and none could be located; distance metrics skipped",
            }
    feasible = cfg.measure.get("feasible_point")
    if feasible is not None and model.is_finite_support:
        for i, dom in enumerate(model.domains()):
            if not dom.contains(np.asarray(feasible, dtype=float), tol=1e-8):
                raise FbmmError(f"declared feasible point violates domain of atom {i}")

    scenario_dir = Path(out_dir) / cfg.name
    scenario_dir.mkdir(parents=True, exist_ok=True)

    runs = []
    if not skip_chains:
        import threading

        semiflow_cache = {"_dir": scenario_dir / "semiflow"}
        semiflow_lock = threading.Lock()
        tasks = []
        for gi, gamma in enumerate(cfg.gammas):
            for seed in cfg.seeds:
                run_dir = scenario_dir / repr(float(gamma)) / str(seed)
                tasks.append((model, cfg, float(gamma), gi, int(seed), run_dir, semiflow_cache, semiflow_lock))
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                runs = list(pool.map(lambda t: _run_one(*t), tasks))
        else:
            runs = [_run_one(*t) for t in tasks]

    model_records, flag_data = _model_level_records(model, cfg)
    if witness_record is not None:
        model_records.append(witness_record)
    if model_records:
        _write_jsonl(scenario_dir / "model_diag.jsonl", model_records)

    rows, flags = _summary_rows(cfg, model, runs, flag_data)
    summary_path = scenario_dir / "summary.csv"
    _write_summary(summary_path, rows)

    chain_runs = [r for r in runs]
    all_failed = bool(chain_runs) and all(not r.ok for r in chain_runs)
    return ScenarioResult(
        out_dir=scenario_dir,
        summary_path=summary_path,
        runs=runs,
        flags=flags,
        all_failed=all_failed,
        model_records=model_records,
    )
