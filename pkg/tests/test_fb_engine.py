import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmm.errors import NumericalFailureError
from fbmm.fb_engine import (
    InterpolatedPath,
    OccupationAccumulator,
    fb_step,
    run_chain,
    run_chain_batch,
    trajectory_to_csv,
)
from fbmm.operators import (
    AffineAtom,
    IndicatorAtom,
    L1Prox,
    LinearMap,
    QuadraticProx,
    ZeroMap,
)
from fbmm.random_model import FiniteSupport, RandomOperatorModel, SupportAtom
from fbmm.sets import Ball, Box, FullSpace


def _model(atoms):
    return RandomOperatorModel(support=FiniteSupport(atoms))


def degenerate(a, b=None):
    return _model([SupportAtom(1.0, a, b if b is not None else ZeroMap(), FullSpace())])


def affine1d_noisy():
    return _model(
        [
            SupportAtom(0.5, AffineAtom([[0.5]], [-2.5]), ZeroMap(), FullSpace()),
            SupportAtom(0.5, AffineAtom([[1.5]], [0.5]), ZeroMap(), FullSpace()),
        ]
    )


# ---------------------------------------------------------------------------
# fb_step
# ---------------------------------------------------------------------------


def test_step_soft_thresholds_the_forward_step():
    model = degenerate(L1Prox(1.0), LinearMap([[1.0]]))
    out = fb_step(model, 0.1, np.array([1.0]), np.random.default_rng(0))
    assert out == pytest.approx(0.8)  # prox_{0.1|.|}(0.9)


def test_step_resolvent_only():
    model = degenerate(AffineAtom([[1.0]], [0.0]))
    out = fb_step(model, 0.5, np.array([3.0]), np.random.default_rng(0))
    assert out == pytest.approx(2.0)


def test_step_projected_gradient():
    model = degenerate(IndicatorAtom(Box([0.0], [1.0])), LinearMap([[1.0]], [-2.0]))
    out = fb_step(model, 0.5, np.array([0.0]), np.random.default_rng(0))
    assert out == pytest.approx(1.0)  # project(0 - 0.5*(-2)) = project(1)


def test_step_equals_yosida_form():
    model = affine1d_noisy()
    rng = np.random.default_rng(5)
    x = np.array([2.3])
    for _ in range(50):
        state = rng.bit_generator.state
        out = fb_step(model, 0.2, x, rng)
        rng.bit_generator.state = state
        a, b, _ = model.support.draw(rng)
        z = x - 0.2 * b(x)
        alt = x - 0.2 * b(x) - 0.2 * a.yosida(0.2, z)
        assert abs(out - alt) < 1e-12
        x = out


def test_step_rejects_gamma_above_cap():
    model = degenerate(L1Prox(1.0))
    with pytest.raises(ValueError):
        fb_step(model, 1.5, np.array([0.0]), np.random.default_rng(0))
    fb_step(model, 1.5, np.array([0.0]), np.random.default_rng(0), gamma0=2.0)


# ---------------------------------------------------------------------------
# run_chain
# ---------------------------------------------------------------------------


def test_chain_rejects_zero_steps():
    model = degenerate(AffineAtom([[1.0]], [0.0]))
    with pytest.raises(ValueError):
        run_chain(model, 0.5, 0, [3.0], seed=0)
    traj = run_chain(model, 0.5, 1, [3.0], seed=0)
    np.testing.assert_allclose(traj.iterates.ravel(), [3.0, 2.0])


def test_chain_repeated_scalar_resolvent():
    model = degenerate(AffineAtom([[1.0]], [0.0]))
    traj = run_chain(model, 0.5, 2, [3.0], seed=0)
    np.testing.assert_allclose(traj.iterates.ravel(), [3.0, 2.0, 4.0 / 3.0])


def test_chain_constant_at_projection_fixed_point():
    model = degenerate(IndicatorAtom(Ball([0.0, 0.0], 1.0)))
    traj = run_chain(model, 0.3, 25, [0.2, -0.4], seed=1)
    assert np.all(traj.iterates == traj.iterates[0])


def test_chain_deterministic_given_seed():
    model = affine1d_noisy()
    t1 = run_chain(model, 0.1, 500, [0.0], seed=99)
    t2 = run_chain(model, 0.1, 500, [0.0], seed=99)
    assert np.array_equal(t1.iterates, t2.iterates)
    assert np.array_equal(t1.cesaro_history, t2.cesaro_history)


def test_chain_restart_is_bitwise_consistent():
    # n steps + n more from the same stream == 2n steps in one go
    model = affine1d_noisy()
    full = run_chain(model, 0.1, 200, [0.3], seed=7)
    rng = np.random.default_rng(7)
    first = run_chain(model, 0.1, 100, [0.3], rng=rng)
    second = run_chain(model, 0.1, 100, first.final, rng=rng)
    glued = np.vstack([first.iterates, second.iterates[1:]])
    assert np.array_equal(glued, full.iterates)


def test_cesaro_matches_recomputed_mean():
    model = affine1d_noisy()
    traj = run_chain(model, 0.1, 3000, [0.0], seed=3)
    for k in (0, 1, 57, 1500, 3000):
        recomputed = traj.iterates[: k + 1].mean(axis=0)
        assert np.linalg.norm(traj.cesaro_history[k] - recomputed) < 1e-12


def test_fejer_monotone_on_deterministic_cocoercive_model():
    # A = |.|-subdifferential, B = grad of 0.5(x-2)^2, gamma below 2/L
    model = degenerate(L1Prox(1.0), LinearMap([[1.0]], [-2.0]))
    x_star = np.array([1.0])  # 0 in sign(1) + (1 - 2) = 1 - 1
    traj = run_chain(model, 0.5, 100, [7.0], seed=0)
    d = np.linalg.norm(traj.iterates - x_star, axis=1)
    assert np.all(np.diff(d) <= 1e-12)


def test_markov_blowup_raises_with_partial_trajectory():
    # monotone but expansive forward map: skew rotation with big gain
    model = degenerate(
        QuadraticProx(np.zeros((2, 2)), np.zeros(2)),
        LinearMap([[0.0, 60.0], [-60.0, 0.0]]),
    )
    with pytest.raises(NumericalFailureError) as exc:
        run_chain(model, 1.0, 2000, [1.0, 0.0], seed=0)
    err = exc.value
    assert err.step_index is not None and err.partial is not None
    assert err.partial.n_steps == err.step_index - 1
    assert np.all(np.isfinite(err.partial.iterates))


def test_thinning_keeps_exact_cesaro_and_final():
    model = affine1d_noisy()
    dense = run_chain(model, 0.1, 999, [0.0], seed=5)
    thin = run_chain(model, 0.1, 999, [0.0], seed=5, max_store=100)
    assert not thin.is_dense
    assert np.array_equal(thin.final, dense.final)
    assert np.array_equal(thin.cesaro, dense.cesaro)
    # stored steps are a subset with identical values
    for idx, step in enumerate(thin.steps):
        assert np.array_equal(thin.iterates[idx], dense.iterates[step])


# ---------------------------------------------------------------------------
# batch runs
# ---------------------------------------------------------------------------


def test_batch_matches_single_runs_bitwise():
    model = _model(
        [
            SupportAtom(0.25, AffineAtom([[1.0, 2.0], [-2.0, 1.0]], [1.0, -1.0]), ZeroMap(), FullSpace()),
            SupportAtom(0.25, L1Prox(0.5), LinearMap(np.eye(2), [-1.0, 0.0]), FullSpace()),
            SupportAtom(0.5, IndicatorAtom(Box([-2.0, -2.0], [2.0, 2.0])), LinearMap(np.eye(2)), FullSpace()),
        ]
    )
    seeds = [11, 22, 33, 44]
    x0s = np.array([[0.1, 0.2], [1.0, -1.0], [0.0, 0.0], [-0.5, 0.7]])
    batch = run_chain_batch(
        model, 0.1, 400, x0s, [np.random.default_rng(s) for s in seeds]
    )
    for k, s in enumerate(seeds):
        single = run_chain(model, 0.1, 400, x0s[k], seed=s)
        assert np.array_equal(batch.final[k], single.final)
        assert np.array_equal(batch.cesaro[k], single.cesaro)


def test_batch_occupation_accumulator_counts():
    model = degenerate(AffineAtom([[1.0]], [0.0]))
    acc = OccupationAccumulator(np.array([0.0]), [0.5])
    run_chain_batch(model, 0.5, 10, np.array([[8.0]]), [np.random.default_rng(0)], accumulators=[acc])
    # iterates 8, 8/1.5, ...: count how many exceed 0.5 among the 11 points
    vals = 8.0 / 1.5 ** np.arange(11)
    expected = np.mean(vals > 0.5)
    assert acc.fractions()[0, 0] == pytest.approx(expected)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------


def _simple_traj(points, gamma=0.5):
    model = degenerate(AffineAtom([[1.0]], [0.0]))
    traj = run_chain(model, gamma, len(points) - 1, [points[0]], seed=0)
    return InterpolatedPath(
        traj.__class__(
            gamma=gamma,
            seed=0,
            x0=np.array([points[0]]),
            steps=np.arange(len(points)),
            iterates=np.array(points)[:, None].astype(float),
            cesaro_history=np.cumsum(points)[:, None] / np.arange(1, len(points) + 1)[:, None],
            n_steps=len(points) - 1,
        )
    )


def test_interpolation_examples():
    path = _simple_traj([0.0, 2.0, 4.0], gamma=0.5)
    assert path.at(0.0) == pytest.approx(0.0)
    assert path.at(0.25) == pytest.approx(1.0)  # midpoint of first segment
    assert path.at(1.25 * 0.5) == pytest.approx(2.5)  # quarter into second segment
    assert path.at(1.0) == pytest.approx(4.0)


def test_interpolation_hits_knots_exactly():
    model = affine1d_noisy()
    traj = run_chain(model, 0.1, 50, [0.3], seed=2)
    path = InterpolatedPath(traj)
    ts = 0.1 * np.arange(51)
    np.testing.assert_array_equal(path.at_many(ts), traj.iterates)


def test_interpolation_out_of_range():
    path = _simple_traj([0.0, 1.0, 2.0], gamma=0.5)
    with pytest.raises(ValueError):
        path.at(1.5)
    with pytest.raises(ValueError):
        path.at(-0.2)


@settings(max_examples=60)
@given(t=st.floats(0, 1))
def test_interpolation_is_piecewise_linear(t):
    path = _simple_traj([0.0, 2.0, 4.0], gamma=0.5)
    # the chosen knots lie on one line, so any t reproduces 4t (up to the
    # knot-snapping window of the evaluator)
    assert path.at(t)[0] == pytest.approx(4.0 * t, abs=1e-8)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def test_trajectory_csv_layout(tmp_path):
    model = affine1d_noisy()
    traj = run_chain(model, 0.25, 4, [1.0], seed=0)
    out = tmp_path / "traj.csv"
    trajectory_to_csv(traj, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "step,t,x_1,cesaro_1"
    assert len(lines) == 6
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[1]) == 0.0
    assert float(first[2]) == 1.0
    last = lines[-1].split(",")
    assert last[0] == "4" and float(last[1]) == pytest.approx(1.0)
    assert float(last[3]) == pytest.approx(float(traj.cesaro[0]))


def test_chain_on_sampler_measure_is_seed_deterministic():
    from fbmm.random_model import GenericSampler

    def draw(rng):
        d = -1.0 + 0.3 * rng.standard_normal(1)
        return AffineAtom([[1.0]], d), ZeroMap(), FullSpace()

    model = RandomOperatorModel(support=GenericSampler(draw), x_star=[1.0])
    t1 = run_chain(model, 0.1, 200, [0.0], seed=12)
    t2 = run_chain(model, 0.1, 200, [0.0], seed=12)
    assert np.array_equal(t1.iterates, t2.iterates)
    # the chain hovers near the mean-operator zero
    assert abs(t1.cesaro[0] - 1.0) < 0.3


def test_batch_matches_single_runs_bitwise_dim8():
    # higher dimension stresses the width-independent linear algebra paths
    rng = np.random.default_rng(3)
    skew = rng.standard_normal((8, 8))
    h = skew - skew.T + np.eye(8)
    psd = rng.standard_normal((8, 8))
    model = _model(
        [
            SupportAtom(0.5, AffineAtom(h, rng.standard_normal(8)), LinearMap(psd @ psd.T / 8), FullSpace()),
            SupportAtom(0.5, QuadraticProx(psd @ psd.T / 8, rng.standard_normal(8)), ZeroMap(), FullSpace()),
        ]
    )
    seeds = [5, 6, 7]
    x0s = rng.uniform(-1, 1, (3, 8))
    batch = run_chain_batch(model, 0.05, 200, x0s, [np.random.default_rng(s) for s in seeds])
    for k, s in enumerate(seeds):
        single = run_chain(model, 0.05, 200, x0s[k], seed=s)
        assert np.array_equal(batch.final[k], single.final)
        assert np.array_equal(batch.cesaro[k], single.cesaro)
