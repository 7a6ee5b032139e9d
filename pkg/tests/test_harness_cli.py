import json

import numpy as np
import pytest

from fbmm.cli import main
from fbmm.config import (
    ScenarioConfig,
    build_model,
    config_from_dict,
    draw_initial_point,
    dump_toml,
    load_toml,
    validate_config,
)
from fbmm.errors import ScenarioValidationError
from fbmm.fb_engine import run_chain
from fbmm.harness import run_scenario
from fbmm.scenarios import (
    affine1d_config,
    affine_rotational_config,
    bounded_domain_config,
    builtin_scenarios,
    lasso_constrained_config,
)


def tiny_affine_config(**overrides):
    cfg = affine1d_config()
    base = dict(
        gammas=(0.1,),
        n_steps=10,
        seeds=(0,),
        diagnostics=cfg.diagnostics.__class__(),  # all toggles off
    )
    base.update(overrides)
    import dataclasses

    return dataclasses.replace(cfg, **base)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def test_builtin_configs_validate():
    for name, cfg in builtin_scenarios().items():
        assert validate_config(cfg), name


def test_empty_gamma_list_rejected():
    cfg = tiny_affine_config(gammas=())
    with pytest.raises(ScenarioValidationError) as exc:
        validate_config(cfg)
    assert exc.value.path == "gammas"


def test_gamma_above_cap_rejected():
    cfg = tiny_affine_config(gammas=(1.5,))
    with pytest.raises(ScenarioValidationError) as exc:
        validate_config(cfg)
    assert "gammas[0]" == exc.value.path


def test_duplicate_seeds_rejected():
    cfg = tiny_affine_config(seeds=(1, 1))
    with pytest.raises(ScenarioValidationError) as exc:
        validate_config(cfg)
    assert exc.value.path == "seeds"


def test_unknown_atom_kind_rejected():
    cfg = tiny_affine_config()
    measure = json.loads(json.dumps(cfg.measure))
    measure["atoms"][0]["a"] = {"kind": "mystery"}
    import dataclasses

    cfg = dataclasses.replace(cfg, measure=measure)
    with pytest.raises(ScenarioValidationError) as exc:
        validate_config(cfg)
    assert "measure.atoms[0].a" in exc.value.path


def test_shadow_horizon_must_fit():
    cfg = affine1d_config()
    import dataclasses

    diag = dataclasses.replace(cfg.diagnostics, shadow_t=1e9)
    cfg = dataclasses.replace(cfg, diagnostics=diag)
    with pytest.raises(ScenarioValidationError) as exc:
        validate_config(cfg)
    assert exc.value.path == "diagnostics.shadow_t"


def test_weights_must_sum_in_config():
    cfg = tiny_affine_config()
    measure = json.loads(json.dumps(cfg.measure))
    measure["atoms"][0]["weight"] = 0.75
    import dataclasses

    cfg = dataclasses.replace(cfg, measure=measure)
    with pytest.raises(ScenarioValidationError):
        validate_config(cfg)


# ---------------------------------------------------------------------------
# TOML round trip
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("maker", [affine1d_config, affine_rotational_config, lasso_constrained_config, bounded_domain_config])
def test_toml_round_trip(tmp_path, maker):
    cfg = maker()
    text = dump_toml(cfg)
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    back = load_toml(path)
    assert back == cfg


def test_config_from_dict_rejects_unknown_fields():
    data = {
        "name": "x",
        "dimension": 1,
        "measure": {},
        "init": {},
        "gammas": [0.1],
        "n_steps": 1,
        "seeds": [0],
        "mystery": True,
    }
    with pytest.raises(ScenarioValidationError):
        config_from_dict(data)


def test_init_distributions_draw():
    rng = np.random.default_rng(0)
    assert np.array_equal(draw_initial_point({"kind": "point", "value": [1.0, 2.0]}, rng, 2), [1.0, 2.0])
    g = draw_initial_point({"kind": "gaussian", "mean": [0.0], "std": 2.0}, np.random.default_rng(1), 1)
    g2 = draw_initial_point({"kind": "gaussian", "mean": [0.0], "std": 2.0}, np.random.default_rng(1), 1)
    assert np.array_equal(g, g2)
    u = draw_initial_point({"kind": "uniform", "low": [0.0], "high": [1.0]}, rng, 1)
    assert 0.0 <= u[0] <= 1.0


def test_sampler_measure_builds():
    cfg = tiny_affine_config()
    import dataclasses

    cfg = dataclasses.replace(
        cfg,
        measure={
            "type": "sampler",
            "builtin": "affine_gaussian",
            "params": {"h": [[1.0]], "d_mean": [-1.0], "d_std": 0.1},
            "x_star": [1.0],
        },
    )
    validate_config(cfg)
    model = build_model(cfg)
    assert not model.is_finite_support
    assert not model.domain_certified
    a, b, _ = model.support.draw(np.random.default_rng(0))
    assert a.h[0][0] == 1.0


# ---------------------------------------------------------------------------
# run_scenario
# ---------------------------------------------------------------------------


def test_run_scenario_trajectory_matches_run_chain(tmp_path):
    cfg = tiny_affine_config()
    result = run_scenario(cfg, tmp_path)
    model = build_model(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.master_seed, 0, 0]))
    x0 = draw_initial_point(cfg.init, rng, cfg.dimension)
    traj = run_chain(model, 0.1, 10, x0, rng=rng)
    lines = (result.out_dir / "0.1" / "0" / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 12
    for k, line in enumerate(lines[1:]):
        fields = line.split(",")
        assert int(fields[0]) == k
        assert float(fields[2]) == traj.iterates[k][0]
        assert float(fields[3]) == traj.cesaro_history[k][0]


def test_run_scenario_reproducible_bytes(tmp_path):
    cfg = tiny_affine_config(seeds=(0, 1), gammas=(0.1, 0.05))
    r1 = run_scenario(cfg, tmp_path / "a")
    r2 = run_scenario(cfg, tmp_path / "b")
    files1 = sorted(p.relative_to(r1.out_dir) for p in r1.out_dir.rglob("*.csv"))
    files2 = sorted(p.relative_to(r2.out_dir) for p in r2.out_dir.rglob("*.csv"))
    assert files1 == files2
    for rel in files1:
        assert (r1.out_dir / rel).read_bytes() == (r2.out_dir / rel).read_bytes()


def test_run_scenario_jobs_match_serial(tmp_path):
    cfg = tiny_affine_config(seeds=(0, 1, 2), gammas=(0.1, 0.05), n_steps=50)
    r1 = run_scenario(cfg, tmp_path / "serial", jobs=1)
    r2 = run_scenario(cfg, tmp_path / "par", jobs=4)
    for rel in sorted(p.relative_to(r1.out_dir) for p in r1.out_dir.rglob("*.csv")):
        assert (r1.out_dir / rel).read_bytes() == (r2.out_dir / rel).read_bytes()


def test_run_scenario_records_numerical_failure(tmp_path):
    measure = {
        "type": "finite",
        "atoms": [
            {
                "weight": 1.0,
                "a": {"kind": "zero"},
                "b": {"kind": "linear", "m": [[0.0, 60.0], [-60.0, 0.0]], "c": [0.0, 0.0]},
            }
        ],
    }
    cfg = ScenarioConfig(
        name="blowup",
        dimension=2,
        measure=measure,
        init={"kind": "point", "value": [1.0, 0.0]},
        gammas=(1.0,),
        n_steps=500,
        seeds=(0,),
    )
    result = run_scenario(cfg, tmp_path)
    assert result.all_failed
    rec = json.loads((result.out_dir / "1.0" / "0" / "diag.jsonl").read_text().splitlines()[0])
    assert rec["type"] == "failure" and rec["step_index"] > 0


def test_run_scenario_flags_present(tmp_path):
    cfg = affine1d_config()
    import dataclasses

    cfg = dataclasses.replace(cfg, n_steps=400, seeds=(0, 1, 2, 3))
    result = run_scenario(cfg, tmp_path)
    assert "drift_nonneg" in result.flags
    assert result.flags["drift_nonneg"] is True
    summary = result.summary_path.read_text().splitlines()
    assert summary[0] == "gamma,metric,mean,q10,q90,ci_lo,ci_hi"
    metrics = {line.split(",")[1] for line in summary[1:]}
    assert {"cesaro_dist", "drift_min_margin"} <= metrics
    assert any(m.startswith("flag_") for m in metrics)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_scenarios_lists(capsys):
    assert main(["scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("affine1d", "affine-rotational", "lasso-constrained", "bounded-domain"):
        assert name in out


def test_cli_dump_and_check(tmp_path, capsys):
    assert main(["scenarios", "--dump", "affine1d"]) == 0
    text = capsys.readouterr().out
    cfg_path = tmp_path / "affine1d.toml"
    cfg_path.write_text(text)
    assert main(["check", str(cfg_path)]) == 0


def test_cli_check_rejects_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('name = "x"\n')
    assert main(["check", str(bad)]) == 1
    assert main(["check", "no-such-scenario"]) == 1


def test_cli_run_unknown_builtin():
    assert main(["run", "nope"]) == 1


def test_cli_run_exit_codes(tmp_path, capsys):
    toml = """
name = "tiny"
dimension = 1
gammas = [0.1]
n_steps = 20
seeds = [0, 1]
master_seed = 5

[init]
kind = "point"
value = [0.0]

[measure]
type = "finite"
x_star = [1.0]

[[measure.atoms]]
weight = 0.5
a = {kind = "affine", h = [[0.5]], d = [-2.5]}
b = {kind = "zero"}
phi = [-2.0]

[[measure.atoms]]
weight = 0.5
a = {kind = "affine", h = [[1.5]], d = [0.5]}
b = {kind = "zero"}
phi = [2.0]

[diagnostics]
drift = true
"""
    p = tmp_path / "tiny.toml"
    p.write_text(toml)
    assert main(["run", str(p), "--out", str(tmp_path / "out")]) == 0


def test_cli_flag_failure_exit_code(tmp_path):
    # an occupation threshold no chain ever exceeds makes the paired-gamma
    # comparison a tie, which the strict flag marks failed (exit 3)
    cfg = affine1d_config()
    import dataclasses

    diag = dataclasses.replace(
        cfg.diagnostics, drift=False, shadowing=False, occupation_eps=(1e6,)
    )
    cfg = dataclasses.replace(cfg, diagnostics=diag, n_steps=50, seeds=(0, 1))
    text = dump_toml(cfg)
    p = tmp_path / "tie.toml"
    p.write_text(text)
    assert main(["run", str(p), "--out", str(tmp_path / "out")]) == 3


def test_cli_all_failed_exit_code(tmp_path):
    toml = """
name = "blowup"
dimension = 2
gammas = [1.0]
n_steps = 500
seeds = [0]

[init]
kind = "point"
value = [1.0, 0.0]

[measure]
type = "finite"

[[measure.atoms]]
weight = 1.0
a = {kind = "zero"}
b = {kind = "linear", m = [[0.0, 60.0], [-60.0, 0.0]], c = [0.0, 0.0]}
"""
    p = tmp_path / "blowup.toml"
    p.write_text(toml)
    assert main(["run", str(p), "--out", str(tmp_path / "out")]) == 2


def test_cli_drift_subcommand_skips_chains(tmp_path):
    assert main(["drift", "affine1d", "--out", str(tmp_path)]) == 0
    scenario_dir = tmp_path / "affine1d"
    assert (scenario_dir / "model_diag.jsonl").exists()
    assert not any(scenario_dir.glob("*/*/trajectory.csv"))


def test_cli_shadow_subcommand(tmp_path):
    import dataclasses

    cfg = affine1d_config()
    cfg = dataclasses.replace(cfg, n_steps=300, seeds=(0, 1, 2, 3), gammas=(0.2, 0.02))
    diag = dataclasses.replace(cfg.diagnostics, shadow_t=2.0, shadow_n_max=2, shadow_h=0.01)
    cfg = dataclasses.replace(cfg, diagnostics=diag)
    p = tmp_path / "cfg.toml"
    p.write_text(dump_toml(cfg))
    assert main(["shadow", str(p), "--out", str(tmp_path / "out")]) == 0
    diag_file = tmp_path / "out" / "affine1d" / "0.2" / "0" / "diag.jsonl"
    recs = [json.loads(l) for l in diag_file.read_text().splitlines()]
    assert any(r["type"] == "shadow" for r in recs)
    assert not any(r["type"] == "drift_sweep" for r in recs)


def test_affine1d_witness_is_mean_solution():
    cfg = affine1d_config()
    model = build_model(cfg)
    h_bar = sum(sa.weight * sa.a.h for sa in model.support.atoms)
    d_bar = sum(sa.weight * sa.a.d for sa in model.support.atoms)
    np.testing.assert_allclose(-np.linalg.solve(h_bar, d_bar), model.x_star, atol=1e-12)
    np.testing.assert_allclose(h_bar, [[1.0]])
    np.testing.assert_allclose(d_bar, [-1.0])


def test_lasso_witness_cross_checked_by_flow_average():
    from fbmm.di_reference import locate_zero

    cfg = lasso_constrained_config()
    model = build_model(cfg)
    z, info = locate_zero(model, [0.0, 0.0], tol=1e-2, h=0.02, return_info=True)
    assert info["witness_distance"] < 5e-2
    np.testing.assert_allclose(z, model.x_star, atol=5e-2)


def test_bounded_domain_feasible_point_in_every_domain():
    cfg = bounded_domain_config()
    model = build_model(cfg)
    feasible = np.asarray(cfg.measure["feasible_point"], dtype=float)
    for dom in model.domains():
        assert dom.contains(feasible, tol=1e-8)


def test_shadow_runs_export_semiflow(tmp_path):
    import dataclasses

    cfg = affine1d_config()
    cfg = dataclasses.replace(cfg, n_steps=100, seeds=(0, 1), gammas=(0.1,),
                              init={"kind": "point", "value": [0.5]})
    diag = dataclasses.replace(cfg.diagnostics, shadow_t=2.0, shadow_n_max=2, shadow_h=0.01)
    cfg = dataclasses.replace(cfg, diagnostics=diag)
    result = run_scenario(cfg, tmp_path)
    flows = sorted((result.out_dir / "semiflow").glob("semiflow_*.csv"))
    # one distinct start point -> exactly one exported reference path
    assert len(flows) == 1
    assert (result.out_dir / "semiflow" / "semiflow_0.json").exists()


def test_run_scenario_lasso_end_to_end(tmp_path):
    import dataclasses

    cfg = lasso_constrained_config()
    diag = dataclasses.replace(cfg.diagnostics, shadowing=False, drift=False, regularity=True)
    cfg = dataclasses.replace(cfg, n_steps=500, seeds=(0, 1, 2), diagnostics=diag)
    result = run_scenario(cfg, tmp_path, jobs=2)
    summary = result.summary_path.read_text().splitlines()
    gammas = {line.split(",")[0] for line in summary[1:] if line.split(",")[1] == "cesaro_dist"}
    assert gammas == {repr(g) for g in cfg.gammas}
    occ = [line for line in summary[1:] if line.split(",")[1].startswith("occupation_eps")]
    assert len(occ) == len(cfg.gammas)
    assert any(line.split(",")[1] == "linear_regularity_lb" for line in summary[1:])


def test_run_scenario_on_sampler_measure(tmp_path):
    import dataclasses

    cfg = tiny_affine_config(n_steps=50, seeds=(0, 1))
    diag = dataclasses.replace(cfg.diagnostics, regularity=True, psi_growth=True)
    cfg = dataclasses.replace(
        cfg,
        diagnostics=diag,
        measure={
            "type": "sampler",
            "builtin": "affine_gaussian",
            "params": {"h": [[1.0]], "d_mean": [-1.0], "d_std": 0.2},
            "x_star": [1.0],
        },
    )
    result = run_scenario(cfg, tmp_path)
    assert all(r.ok for r in result.runs)
    notes = [r for r in result.model_records if r.get("type") == "note"]
    assert any("not certified" in r["message"] for r in notes)


def test_half_infinite_box_round_trips(tmp_path):
    toml = """
name = "halfbox"
dimension = 1
gammas = [0.1]
n_steps = 20
seeds = [0]

[init]
kind = "point"
value = [2.0]

[measure]
type = "finite"

[[measure.atoms]]
weight = 1.0
a = {kind = "indicator", set = {kind = "box", low = [0.0], high = [inf]}}
b = {kind = "linear", m = [[1.0]], c = [1.0]}
"""
    p = tmp_path / "halfbox.toml"
    p.write_text(toml)
    cfg = load_toml(p)
    validate_config(cfg)
    model = build_model(cfg)
    # drift x + 1 pushes left; the projection clamps at the boundary 0
    traj = run_chain(model, 0.1, 200, np.array([2.0]), seed=0)
    assert traj.final[0] == pytest.approx(0.0, abs=1e-6)
    text = dump_toml(cfg)
    assert "inf" in text
    p2 = tmp_path / "again.toml"
    p2.write_text(text)
    assert load_toml(p2) == cfg


def test_lasso_witness_against_convex_solver():
    cvxpy = pytest.importorskip("cvxpy")
    cfg = lasso_constrained_config()
    model = build_model(cfg)
    x = cvxpy.Variable(2)
    objective = cvxpy.Minimize(
        0.25 * cvxpy.sum_squares(x - np.array([2.0, 1.0]))
        + 0.25 * cvxpy.sum_squares(x - np.array([0.0, -1.0]))
        + 0.1 * cvxpy.norm1(x)
    )
    prob = cvxpy.Problem(objective, [x[0] <= 0.75, x[1] <= 0.5])
    prob.solve(solver=cvxpy.CLARABEL)
    np.testing.assert_allclose(x.value, model.x_star, atol=1e-6)


def test_affine_phi_autofill():
    cfg = tiny_affine_config()
    measure = json.loads(json.dumps(cfg.measure))
    for atom in measure["atoms"]:
        atom.pop("phi")
    import dataclasses

    cfg = dataclasses.replace(cfg, measure=measure)
    model = build_model(cfg)
    assert model.phi is not None
    np.testing.assert_allclose(model.phi[0], [-2.0])
    np.testing.assert_allclose(model.phi[1], [2.0])
    from fbmm.random_model import validate_l2_representation

    assert validate_l2_representation(model)


def test_witness_located_when_missing(tmp_path):
    cfg = tiny_affine_config(n_steps=100, seeds=(0, 1))
    measure = json.loads(json.dumps(cfg.measure))
    measure.pop("x_star")
    for atom in measure["atoms"]:
        atom.pop("phi")
        atom["a"]["h"] = [[1.0]]  # identical slopes keep the zero at 1
    import dataclasses

    diag = dataclasses.replace(cfg.diagnostics, occupation_eps=(0.5,))
    cfg = dataclasses.replace(cfg, measure=measure, diagnostics=diag)
    result = run_scenario(cfg, tmp_path)
    located = [r for r in result.model_records if r.get("type") == "located_witness"]
    assert located and abs(located[0]["x_star"][0] - 1.0) < 5e-3
    assert all(r.cesaro_dist is not None for r in result.runs)
