"""Probability models over pairs of monotone operators.

A model is either a finite-support list of weighted atoms (expectations are
exact sums) or a generic seeded sampler (expectations are Monte Carlo
estimates with standard errors).  A model may carry a zero witness ``x_star``
of the mean inclusion and, per finite atom, a square-integrable selection
vector ``phi`` in ``A(s, x_star)`` certifying it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioValidationError, UnsupportedOperatorError
from .operators import (
    AffineAtom,
    IndicatorAtom,
    OperatorAtom,
    ProxAtom,
    SmoothAtom,
)
from .sets import ConvexSet, FullSpace, intersection_distance, project_intersection

__all__ = [
    "SupportAtom",
    "FiniteSupport",
    "GenericSampler",
    "RandomOperatorModel",
    "ProxGradScenario",
    "sample",
    "mean_b",
    "build_prox_grad_model",
    "validate_l2_representation",
    "project_essential_domain",
    "essential_domain_distance",
]

WEIGHT_TOL = 1e-12
L2_TOL = 1e-8


@dataclass(frozen=True)
class SupportAtom:
    """One support point: weight, backward atom, forward map, domain."""

    weight: float
    a: OperatorAtom
    b: SmoothAtom
    domain: ConvexSet


class FiniteSupport:
    """Finitely many atoms with weights summing to one."""

    def __init__(self, atoms):
        atoms = tuple(atoms)
        if not atoms:
            raise ValueError("finite support needs at least one atom")
        w = np.array([a.weight for a in atoms], dtype=float)
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within {WEIGHT_TOL}")
        self.atoms = atoms
        self.weights = w
        self._cumw = np.cumsum(w)

    def __len__(self):
        return len(self.atoms)

    def index_from_uniform(self, u):
        """Map uniform(0,1) draws to atom indices (vectorized)."""
        idx = np.searchsorted(self._cumw, u, side="right")
        return np.minimum(idx, len(self.atoms) - 1)

    def draw(self, rng):
        i = int(self.index_from_uniform(rng.random()))
        a = self.atoms[i]
        return a.a, a.b, a.domain


class GenericSampler:
    """Wraps a callable ``rng -> (a_atom, b_atom, domain)``."""

    def __init__(self, draw_fn, name="sampler"):
        self._draw_fn = draw_fn
        self.name = name

    def draw(self, rng):
        a, b, dom = self._draw_fn(rng)
        return a, b, dom


@dataclass
class RandomOperatorModel:
    """The random operator pair together with optional zero-witness data."""

    support: FiniteSupport | GenericSampler
    x_star: np.ndarray | None = None
    phi: tuple | None = None  # per-atom selection vectors, finite support only
    demipositive: bool | None = None
    #: False for sampler models: the essential domain cannot be certified
    #: from draws, only declared by the scenario.
    domain_certified: bool = field(default=True)

    def __post_init__(self):
        if self.x_star is not None:
            self.x_star = np.atleast_1d(np.asarray(self.x_star, dtype=float))
        if self.phi is not None:
            if not self.is_finite_support:
                raise ValueError("phi vectors require a finite-support model")
            phi = tuple(np.atleast_1d(np.asarray(p, dtype=float)) for p in self.phi)
            if len(phi) != len(self.support.atoms):
                raise ValueError("need one phi vector per support atom")
            self.phi = phi
        if isinstance(self.support, GenericSampler):
            self.domain_certified = False

    @property
    def is_finite_support(self):
        return isinstance(self.support, FiniteSupport)

    def domains(self):
        if not self.is_finite_support:
            raise UnsupportedOperatorError("sampler models do not enumerate domains")
        return [a.domain for a in self.support.atoms]


def sample(model: RandomOperatorModel, rng):
    """Draw one (A-atom, B-map, domain) triple; deterministic given rng state."""
    return model.support.draw(rng)


def mean_b(model: RandomOperatorModel, x, mc_budget=None, rng=None):
    """Mean forward map at ``x``.

    Finite support: the exact weighted sum.  Sampler: Monte Carlo with
    ``mc_budget`` draws, returning ``(estimate, standard_error)``.
    """
    x = np.asarray(x, dtype=float)
    if model.is_finite_support:
        out = np.zeros_like(x)
        for atom in model.support.atoms:
            out += atom.weight * atom.b(x)
        return out
    if mc_budget is None or rng is None:
        raise ValueError("sampler models need mc_budget and rng for mean_b")
    draws = np.empty((mc_budget,) + x.shape)
    for k in range(mc_budget):
        _, b, _ = model.support.draw(rng)
        draws[k] = b(x)
    est = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(mc_budget)
    return est, se


def project_essential_domain(model: RandomOperatorModel, x, tol=1e-10):
    """Project onto the closure of the essential intersection of domains."""
    return project_intersection(model.domains(), x, tol=tol)


def essential_domain_distance(model: RandomOperatorModel, x, tol=1e-10):
    return intersection_distance(model.domains(), x, tol=tol)


def _subgradient_samples(atom, x_star, rng, n_samples, radius=3.0):
    dim = x_star.shape[0]
    ys = x_star + radius * rng.standard_normal((n_samples, dim))
    if isinstance(atom, IndicatorAtom):
        ys = atom.set.project(ys)
    return ys


def validate_l2_representation(model: RandomOperatorModel, rng=None, n_samples=256, tol=L2_TOL):
    """Check the stored selection vectors certify ``x_star``.

    Verifies the weighted mean of ``phi + B(s, x_star)`` vanishes and that
    each ``phi`` is a subgradient / normal-cone element at ``x_star``.
    Raises ``ScenarioValidationError`` on failure.
    """
    if model.x_star is None or model.phi is None:
        raise ScenarioValidationError("measure", "model lacks x_star or phi vectors")
    if rng is None:
        rng = np.random.default_rng(0)
    xs = model.x_star
    total = np.zeros_like(xs)
    for atom, phi in zip(model.support.atoms, model.phi):
        total += atom.weight * (phi + atom.b(xs))
    if np.linalg.norm(total) > tol:
        raise ScenarioValidationError(
            "measure.phi", f"mean(phi + B(x_star)) = {total.tolist()}, not zero within {tol}"
        )
    for i, (atom, phi) in enumerate(zip(model.support.atoms, model.phi)):
        a = atom.a
        if isinstance(a, AffineAtom):
            if np.linalg.norm(phi - a.apply(xs)) > tol:
                raise ScenarioValidationError(
                    f"measure.atoms[{i}].phi", "phi differs from H x_star + d"
                )
        elif isinstance(a, IndicatorAtom):
            if not a.set.contains(xs, tol=tol):
                raise ScenarioValidationError(
                    f"measure.atoms[{i}]", "x_star is outside the indicator set"
                )
            ys = _subgradient_samples(a, xs, rng, n_samples)
            gaps = (ys - xs) @ phi
            if gaps.max(initial=-np.inf) > tol:
                raise ScenarioValidationError(
                    f"measure.atoms[{i}].phi", "phi is not in the normal cone at x_star"
                )
        elif isinstance(a, ProxAtom):
            ys = _subgradient_samples(a, xs, rng, n_samples)
            viol = a.value(xs) + (ys - xs) @ phi - a.value(ys)
            if viol.max(initial=-np.inf) > tol:
                raise ScenarioValidationError(
                    f"measure.atoms[{i}].phi", "phi violates the subgradient inequality at x_star"
                )
        else:
            raise ScenarioValidationError(
                f"measure.atoms[{i}]", f"cannot validate phi for atom {a!r}"
            )
    return True


@dataclass
class ProxGradScenario:
    """Ingredients of a randomized proximal-gradient problem.

    ``smooth``: pairs (weight, gradient map) for the differentiable pieces.
    ``nonsmooth``: pairs (weight, prox atom) for the nonsmooth pieces, with
    the same weights/order as ``smooth``; None means the nonsmooth part is 0.
    ``constraints``: convex sets C_1..C_m with exact projectors.
    ``alpha``: selection law over {0..m}; entry 0 picks the prox branch.

    ``h_subgradients`` hold subgradients of the *unscaled* nonsmooth pieces
    at ``x_star``; ``constraint_normals`` hold normal-cone elements already
    scaled so that the stationarity sum over the product measure vanishes
    (KKT multiplier divided by alpha(i)).  Both are validated at build time.
    """

    smooth: tuple
    constraints: tuple
    alpha: np.ndarray
    nonsmooth: tuple | None = None
    feasible_point: np.ndarray | None = None
    x_star: np.ndarray | None = None
    h_subgradients: tuple | None = None  # per smooth-weight index, in dH(x_star)
    constraint_normals: tuple | None = None  # per constraint, in N_Ci(x_star)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        m = len(self.constraints)
        if self.alpha.shape != (m + 1,):
            raise ScenarioValidationError("alpha", f"expected {m + 1} entries, got {self.alpha.shape}")
        if np.any(self.alpha <= 0):
            raise ScenarioValidationError("alpha", "all selection probabilities must be positive")
        if abs(self.alpha.sum() - 1.0) > WEIGHT_TOL:
            raise ScenarioValidationError("alpha", "selection probabilities must sum to 1")
        if not self.constraints and self.nonsmooth is None:
            raise ScenarioValidationError(
                "scenario", "need at least one constraint or nonsmooth piece"
            )
        if self.feasible_point is not None:
            self.feasible_point = np.asarray(self.feasible_point, dtype=float)
            for i, c in enumerate(self.constraints):
                if not c.contains(self.feasible_point, tol=L2_TOL):
                    raise ScenarioValidationError(
                        f"constraints[{i}]", "declared feasible point is not in the set"
                    )


def build_prox_grad_model(scenario: ProxGradScenario) -> RandomOperatorModel:
    """Assemble the product-measure finite-support model of the scenario.

    Branch 0 applies the prox of the nonsmooth piece rescaled by 1/alpha(0);
    branch i >= 1 projects onto C_i.  The forward map is always the sampled
    smooth gradient.
    """
    zeta = np.array([w for w, _ in scenario.smooth], dtype=float)
    if abs(zeta.sum() - 1.0) > WEIGHT_TOL:
        raise ScenarioValidationError("smooth", "smooth-piece weights must sum to 1")
    alpha0 = float(scenario.alpha[0])
    scaled_cache = {}

    def scaled_h(j):
        if scenario.nonsmooth is None:
            return None
        _, h = scenario.nonsmooth[j]
        key = id(h)
        if key not in scaled_cache:
            scaled_cache[key] = h.scaled(1.0 / alpha0)
        return scaled_cache[key]

    indicator_atoms = [IndicatorAtom(c) for c in scenario.constraints]
    full = FullSpace()
    zero_q = None

    atoms = []
    phi = [] if scenario.x_star is not None else None
    for j, (wj, grad_j) in enumerate(scenario.smooth):
        for i in range(len(scenario.constraints) + 1):
            w = wj * float(scenario.alpha[i])
            if i == 0:
                a = scaled_h(j)
                if a is None:
                    if zero_q is None:
                        from .operators import QuadraticProx

                        dim = scenario.feasible_point.shape[0] if scenario.feasible_point is not None else 1
                        zero_q = QuadraticProx(np.zeros((dim, dim)), np.zeros(dim))
                    a = zero_q
                dom: ConvexSet = full
            else:
                a = indicator_atoms[i - 1]
                dom = scenario.constraints[i - 1]
            atoms.append(SupportAtom(weight=w, a=a, b=grad_j, domain=dom))
            if phi is not None:
                if i == 0:
                    psi = (
                        np.zeros_like(np.asarray(scenario.x_star, dtype=float))
                        if scenario.h_subgradients is None
                        else np.asarray(scenario.h_subgradients[j], dtype=float)
                    )
                    phi.append(psi / alpha0)
                else:
                    theta = (
                        np.zeros_like(np.asarray(scenario.x_star, dtype=float))
                        if scenario.constraint_normals is None
                        else np.asarray(scenario.constraint_normals[i - 1], dtype=float)
                    )
                    phi.append(theta)

    model = RandomOperatorModel(
        support=FiniteSupport(atoms),
        x_star=scenario.x_star,
        phi=tuple(phi) if phi is not None else None,
        demipositive=True,
    )
    return model
