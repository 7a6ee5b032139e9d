"""Quantitative diagnostics for chains and models.

Covers the one-step kernel, the zero-witness dissipation functional psi, the
quadratic drift inequality with its explicit constant, path-space distances
between interpolated chains and the reference flow, occupation statistics,
and a sampling estimator for linear regularity of set families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InconclusiveError, MissingRepresentationError
from .fb_engine import InterpolatedPath, Trajectory
from .random_model import RandomOperatorModel
from .sets import ConvexSet, project_intersection

__all__ = [
    "SqDistTo",
    "CoordinateFn",
    "BallIndicatorFn",
    "LinearComboFn",
    "psi_gamma",
    "psi_inf",
    "kernel_apply",
    "drift_constant",
    "drift_check",
    "DriftCheckResult",
    "ShadowReport",
    "shadowing",
    "dc_distance",
    "cesaro_occupation",
    "linear_regularity_estimate",
    "psi_growth_probe",
    "GrowthProbe",
    "wilson_interval",
]


# ---------------------------------------------------------------------------
# Test-function catalog for the one-step kernel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SqDistTo:
    """f(y) = ||y - point||^2."""

    point: tuple

    def __call__(self, y):
        p = np.asarray(self.point, dtype=float)
        return np.sum((np.asarray(y, dtype=float) - p) ** 2, axis=-1)


@dataclass(frozen=True)
class CoordinateFn:
    """f(y) = y[index]."""

    index: int

    def __call__(self, y):
        return np.asarray(y, dtype=float)[..., self.index]


@dataclass(frozen=True)
class BallIndicatorFn:
    """f(y) = 1 when ||y - center|| <= radius else 0."""

    center: tuple
    radius: float

    def __call__(self, y):
        c = np.asarray(self.center, dtype=float)
        d = np.linalg.norm(np.asarray(y, dtype=float) - c, axis=-1)
        return (d <= self.radius).astype(float)


@dataclass(frozen=True)
class LinearComboFn:
    """f = sum_j coef_j * f_j over catalog functions."""

    terms: tuple  # of (coef, fn)

    def __call__(self, y):
        out = 0.0
        for coef, fn in self.terms:
            out = out + coef * fn(y)
        return out


# ---------------------------------------------------------------------------
# psi and the drift inequality
# ---------------------------------------------------------------------------


def _require_witness(model: RandomOperatorModel):
    if model.x_star is None or model.phi is None:
        raise MissingRepresentationError(
            "model must carry a zero witness and selection vectors"
        )


def _psi_term(a_atom, b_map, phi, gamma, x, x_star):
    bx = b_map(x)
    b_star = b_map(x_star)
    z = x - gamma * bx
    j = a_atom.resolvent(gamma, z)
    a_gam = (z - j) / gamma
    inner = float((a_gam - phi) @ (j - x_star)) + float((bx - b_star) @ (x - x_star))
    return inner + gamma * float(a_gam @ a_gam) - 6.0 * gamma * float((bx - b_star) @ (bx - b_star))


def psi_gamma(model: RandomOperatorModel, gamma, x, mc_budget=None, rng=None):
    """Dissipation functional at the zero witness.

    Exact weighted sum for finite support.  For sampler models a Monte Carlo
    ``(estimate, standard error)`` is available when the drawn backward atoms
    are affine, since the selection at the witness is then H(s) x_star + d(s);
    other samplers carry no per-draw selection and raise.
    """
    if model.x_star is None:
        raise MissingRepresentationError("model must carry a zero witness")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xs = model.x_star
    if model.is_finite_support:
        _require_witness(model)
        total = 0.0
        for sa, phi in zip(model.support.atoms, model.phi):
            total += sa.weight * _psi_term(sa.a, sa.b, phi, gamma, x, xs)
        return total
    if mc_budget is None or rng is None:
        raise ValueError("sampler models need mc_budget and rng")
    from .operators import AffineAtom

    vals = np.empty(mc_budget)
    for k in range(mc_budget):
        a, b, _ = model.support.draw(rng)
        if not isinstance(a, AffineAtom):
            raise MissingRepresentationError(
                "Monte Carlo psi needs affine draws (selection known at the witness)"
            )
        vals[k] = _psi_term(a, b, a.apply(xs), gamma, x, xs)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_budget))


def psi_inf(model: RandomOperatorModel, x, gamma_grid):
    """Grid surrogate for the infimum of psi over the step range."""
    grid = [float(g) for g in gamma_grid]
    if not grid or any(g <= 0 for g in grid):
        raise ValueError("gamma_grid must be nonempty with positive entries")
    return min(psi_gamma(model, g, x) for g in grid)


def kernel_apply(model: RandomOperatorModel, gamma, x, f, mc_budget=None, rng=None):
    """One-step transition expectation of ``f`` started at ``x``.

    Finite support: exact.  Sampler: Monte Carlo (estimate, standard error)
    with ``mc_budget`` draws.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if model.is_finite_support:
        total = 0.0
        for sa in model.support.atoms:
            z = x - gamma * sa.b(x)
            total += sa.weight * float(f(sa.a.resolvent(gamma, z)))
        return total
    if mc_budget is None or rng is None:
        raise ValueError("sampler models need mc_budget and rng")
    vals = np.empty(mc_budget)
    for k in range(mc_budget):
        a, b, _ = model.support.draw(rng)
        z = x - gamma * b(x)
        vals[k] = float(f(a.resolvent(gamma, z)))
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_budget))


def drift_constant(model: RandomOperatorModel):
    """Explicit drift constant 4*E||phi||^2 + 3*E||B(., x_star)||^2."""
    _require_witness(model)
    xs = model.x_star
    phi_sq = 0.0
    b_sq = 0.0
    for sa, phi in zip(model.support.atoms, model.phi):
        phi_sq += sa.weight * float(phi @ phi)
        bs = sa.b(xs)
        b_sq += sa.weight * float(bs @ bs)
    return 4.0 * phi_sq + 3.0 * b_sq


@dataclass
class DriftCheckResult:
    """One evaluation of the quadratic drift inequality."""

    x: np.ndarray
    gamma: float
    lhs: float
    psi: float
    c_explicit: float
    rhs: float
    margin: float
    mode: str = "exact"

    def to_json_dict(self):
        return {
            "type": "drift",
            "x": [float(v) for v in np.atleast_1d(self.x)],
            "gamma": self.gamma,
            "lhs": self.lhs,
            "psi": self.psi,
            "c_explicit": self.c_explicit,
            "rhs": self.rhs,
            "margin": self.margin,
            "mode": self.mode,
        }


def drift_check(model: RandomOperatorModel, gamma, x) -> DriftCheckResult:
    """Evaluate both sides of the one-step quadratic drift bound at ``x``."""
    _require_witness(model)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xs = model.x_star
    lhs = kernel_apply(model, gamma, x, SqDistTo(tuple(xs)))
    psi = psi_gamma(model, gamma, x)
    c = drift_constant(model)
    rhs = float((x - xs) @ (x - xs)) - 0.5 * gamma * psi + gamma * gamma * c
    return DriftCheckResult(
        x=x, gamma=float(gamma), lhs=lhs, psi=psi, c_explicit=c, rhs=rhs,
        margin=rhs - lhs,
    )


# ---------------------------------------------------------------------------
# Path-space distances and shadowing
# ---------------------------------------------------------------------------


def dc_distance(values_a, values_b, ts, n_max):
    """Truncated compact-convergence distance between two sampled paths.

    ``sum_{n=1..n_max} 2^-n * min(1, sup_{[0,n]} ||a - b||)`` on the common
    grid ``ts``; the grid must reach ``n_max``.
    """
    ts = np.asarray(ts, dtype=float)
    if ts[-1] < n_max - 1e-9:
        raise ValueError("grid horizon shorter than n_max")
    diff = np.linalg.norm(np.asarray(values_a) - np.asarray(values_b), axis=-1)
    total = 0.0
    for n in range(1, n_max + 1):
        sup = float(diff[ts <= n + 1e-12].max())
        total += 2.0 ** (-n) * min(1.0, sup)
    return total


@dataclass
class ShadowReport:
    """Distance of one chain to the reference flow over a finite horizon."""

    gamma: float
    seed: int | None
    horizon: float
    sup_dist: float
    dc_trunc: float
    n_max: int
    tail_bound: float
    grid_resolution: float
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self):
        return {
            "type": "shadow",
            "gamma": self.gamma,
            "seed": self.seed,
            "horizon": self.horizon,
            "sup_dist": self.sup_dist,
            "dc_trunc": self.dc_trunc,
            "n_max": self.n_max,
            "tail_bound": self.tail_bound,
            "grid_resolution": self.grid_resolution,
        }


def shadowing(
    model: RandomOperatorModel,
    trajectory: Trajectory,
    semiflow,
    t_end,
    n_max,
) -> ShadowReport:
    """Compare the interpolated chain against the reference flow on [0, t_end].

    The sup is taken over a grid at resolution min(gamma, h); the truncated
    path metric adds a reported tail bound 2^-n_max.
    """
    t_end = float(t_end)
    if trajectory.horizon() < t_end - 1e-12:
        raise ValueError("trajectory horizon shorter than t_end")
    if semiflow.horizon < t_end - 1e-12:
        raise ValueError("semiflow horizon shorter than t_end")
    if n_max > t_end + 1e-12:
        raise ValueError("n_max must not exceed the compared horizon")
    res = min(trajectory.gamma, semiflow.h)
    n_grid = int(round(t_end / res))
    ts = np.linspace(0.0, t_end, n_grid + 1)
    chain_vals = InterpolatedPath(trajectory).at_many(ts)
    flow_vals = semiflow.at_many(ts)
    diff = np.linalg.norm(chain_vals - flow_vals, axis=-1)
    sup = float(diff.max())
    dc = dc_distance(chain_vals, flow_vals, ts, int(n_max))
    return ShadowReport(
        gamma=trajectory.gamma,
        seed=trajectory.seed,
        horizon=t_end,
        sup_dist=sup,
        dc_trunc=dc,
        n_max=int(n_max),
        tail_bound=2.0 ** (-int(n_max)),
        grid_resolution=res,
    )


# ---------------------------------------------------------------------------
# Occupation and regularity
# ---------------------------------------------------------------------------


def _distance_to_target(points, target):
    points = np.asarray(points, dtype=float)
    if isinstance(target, ConvexSet):
        return target.distance(points)
    t = np.atleast_1d(np.asarray(target, dtype=float))
    return np.linalg.norm(points - t, axis=-1)


def cesaro_occupation(trajectory: Trajectory, target, eps):
    """Fraction of iterates farther than ``eps`` from the target."""
    if not trajectory.is_dense:
        raise ValueError("occupation fractions need every iterate stored")
    d = _distance_to_target(trajectory.iterates, target)
    return float(np.mean(d > eps))


def wilson_interval(successes, trials, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    lo = 0.0 if successes == 0 else max(0.0, center - half)
    hi = 1.0 if successes == trials else min(1.0, center + half)
    return lo, hi


def linear_regularity_estimate(
    sets,
    weights,
    sample_box,
    n_samples,
    seed=0,
    exclude_tol=1e-6,
    projection_tol=1e-10,
    feasible_point=None,
    return_info=False,
):
    """Lower-bound sampling estimate of the linear-regularity constant.

    Samples points uniformly in ``sample_box = (low, high)`` and returns the
    minimum of ``sum_i w_i d(x, C_i)^2 / d(x, C)^2`` over samples with
    ``d(x, C) >= exclude_tol``, where C is the intersection.  When a
    ``feasible_point`` is supplied its membership in every set is checked
    first, certifying the intersection is nonempty.
    """
    sets = list(sets)
    weights = np.asarray(weights, dtype=float)
    if len(sets) != len(weights):
        raise ValueError("need one weight per set")
    if feasible_point is not None:
        fp = np.asarray(feasible_point, dtype=float)
        for i, s in enumerate(sets):
            if not s.contains(fp, tol=1e-8):
                raise ValueError(f"declared feasible point is outside set {i}")
    low, high = sample_box
    dims = [s.dim for s in sets if s.dim is not None]
    if not dims:
        raise ValueError("cannot infer the ambient dimension from the sets")
    dim = dims[0]
    rng = np.random.default_rng(seed)
    xs = rng.uniform(low, high, size=(int(n_samples), dim))

    proj = project_intersection(sets, xs, tol=projection_tol)
    dist_int = np.linalg.norm(xs - proj, axis=-1)
    keep = dist_int >= exclude_tol
    if not np.any(keep):
        raise InconclusiveError("all sampled points were feasible; nothing to estimate")
    num = np.zeros(len(xs))
    for w, s in zip(weights, sets):
        num += w * s.distance(xs) ** 2
    ratios = num[keep] / dist_int[keep] ** 2
    est = float(ratios.min())
    if return_info:
        return est, {"kept": int(keep.sum()), "total": int(n_samples)}
    return est


# ---------------------------------------------------------------------------
# Growth probe for the dissipation functional
# ---------------------------------------------------------------------------


@dataclass
class GrowthProbe:
    """Empirical growth of the inf-psi surrogate along large spheres."""

    radii: tuple
    min_ratio_quad: dict
    min_ratio_lin: dict
    exponent: float
    gamma_grid: tuple

    def to_json_dict(self):
        return {
            "type": "psi_growth",
            "radii": list(self.radii),
            "min_ratio_quad": {str(k): v for k, v in self.min_ratio_quad.items()},
            "min_ratio_lin": {str(k): v for k, v in self.min_ratio_lin.items()},
            "exponent": self.exponent,
            "gamma_grid": list(self.gamma_grid),
        }


def psi_growth_probe(
    model: RandomOperatorModel,
    gamma_grid,
    radii=(10.0, 100.0, 1000.0),
    n_directions=16,
    seed=0,
):
    """Evaluate inf-psi over directions at several radii.

    Reports the per-radius minima of psi/||x|| and psi/||x||^2 plus the
    fitted log-log slope, for classifying the growth regime empirically.
    """
    _require_witness(model)
    rng = np.random.default_rng(seed)
    dim = model.x_star.shape[0]
    dirs = rng.standard_normal((n_directions, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    min_quad = {}
    min_lin = {}
    mins = []
    for r in radii:
        vals = np.array([psi_inf(model, r * d, gamma_grid) for d in dirs])
        min_quad[float(r)] = float(vals.min() / r**2)
        min_lin[float(r)] = float(vals.min() / r)
        mins.append(vals.min())
    slope = float(
        np.polyfit(np.log(np.asarray(radii, dtype=float)), np.log(np.maximum(mins, 1e-300)), 1)[0]
    )
    return GrowthProbe(
        radii=tuple(float(r) for r in radii),
        min_ratio_quad=min_quad,
        min_ratio_lin=min_lin,
        exponent=slope,
        gamma_grid=tuple(float(g) for g in gamma_grid),
    )
