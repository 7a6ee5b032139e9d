"""Maximal monotone operator atoms on R^N.

Each atom exposes the resolvent ``(I + gamma*A)^-1`` (exact, or a dense linear
solve), the Yosida regularization ``(I - J_gamma)/gamma``, a least-norm
section of ``A(x)``, and its domain.  All evaluations accept a single point
``(N,)`` or a batch ``(M, N)`` and are pure, so atoms are safe to share
between concurrent chain runs.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainViolationError, UnsupportedOperatorError
from .sets import ConvexSet, FullSpace, apply_matrix, row_dot

__all__ = [
    "OperatorAtom",
    "ProxAtom",
    "L1Prox",
    "QuadraticProx",
    "HingeProx",
    "OracleProx",
    "ScaledProx",
    "ShiftedProx",
    "AffineAtom",
    "IndicatorAtom",
    "SmoothAtom",
    "LinearMap",
    "ZeroMap",
    "GradMap",
    "resolvent",
    "yosida",
    "minimal_section",
    "project_domain",
]

# Construction-time validation tolerance for monotonicity / idempotence.
CONSTRUCTION_TOL = 1e-10

# Yosida step used when a least-norm section has no closed form.
SECTION_GAMMA = 1e-8


def _check_gamma(gamma):
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")


def _check_finite(x, what="point"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} contains non-finite entries")
    return x


class OperatorAtom:
    """Base class for one maximal monotone operator."""

    #: True when minimal_section falls back to a small-gamma Yosida estimate.
    approximate_section = False

    @property
    def domain(self) -> ConvexSet:
        return FullSpace()

    def resolvent(self, gamma, x):
        raise NotImplementedError

    def yosida(self, gamma, x):
        _check_gamma(gamma)
        x = np.asarray(x, dtype=float)
        return (x - self.resolvent(gamma, x)) / gamma

    def minimal_section(self, x):
        raise NotImplementedError

    def _require_in_domain(self, x, tol=1e-8):
        if not self.domain.contains(x, tol=tol):
            raise DomainViolationError(f"point {np.asarray(x).tolist()} outside dom(A)")


class ProxAtom(OperatorAtom):
    """Subdifferential of a convex function given through value + prox."""

    differentiable = False

    def value(self, x):
        raise NotImplementedError

    def prox(self, gamma, x):
        raise NotImplementedError

    def resolvent(self, gamma, x):
        _check_gamma(gamma)
        return self.prox(gamma, np.asarray(x, dtype=float))

    def minimal_section(self, x):
        # Yosida limit fallback; exact catalog entries override this.
        x = _check_finite(x)
        self._require_in_domain(x)
        out = self.yosida(SECTION_GAMMA, x)
        # The Yosida norm increases as its step shrinks; a decrease flags a
        # broken prox oracle.
        coarse = self.yosida(SECTION_GAMMA * 100, x)
        if np.linalg.norm(coarse) > np.linalg.norm(out) + 1e-6 * (1 + np.linalg.norm(out)):
            raise ValueError("prox oracle violates the Yosida monotonicity sanity check")
        return out

    def scaled(self, c):
        return ScaledProx(self, c)


class L1Prox(ProxAtom):
    """weight * ||x||_1, prox = soft threshold."""

    def __init__(self, weight=1.0):
        self.weight = float(weight)
        if self.weight <= 0:
            raise ValueError("l1 weight must be positive")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.weight * np.sum(np.abs(x), axis=-1)

    def prox(self, gamma, x):
        t = gamma * self.weight
        return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)

    def minimal_section(self, x):
        x = _check_finite(x)
        return self.weight * np.sign(x)

    def scaled(self, c):
        return L1Prox(self.weight * c)

    def __repr__(self):
        return f"L1Prox(weight={self.weight})"


class QuadraticProx(ProxAtom):
    """0.5 x'Qx + q'x with Q symmetric PSD; prox is a linear solve."""

    differentiable = True

    def __init__(self, q_mat, q_vec):
        q_mat = np.atleast_2d(np.asarray(q_mat, dtype=float))
        q_vec = np.atleast_1d(np.asarray(q_vec, dtype=float))
        if q_mat.shape[0] != q_mat.shape[1] or q_mat.shape[0] != q_vec.shape[0]:
            raise ValueError("Q must be square and match q")
        if np.max(np.abs(q_mat - q_mat.T), initial=0.0) > CONSTRUCTION_TOL:
            raise ValueError("Q must be symmetric")
        if q_mat.size and np.linalg.eigvalsh(q_mat).min() < -CONSTRUCTION_TOL:
            raise ValueError("Q must be positive semidefinite")
        self.q_mat = q_mat
        self.q_vec = q_vec
        self._inv_cache = {}

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * row_dot(apply_matrix(self.q_mat, x), x) + row_dot(x, self.q_vec)

    def grad(self, x):
        return apply_matrix(self.q_mat, np.asarray(x, dtype=float)) + self.q_vec

    def _solve(self, gamma, rhs):
        # cached dense inverse per step value; (I + gamma*Q) is well
        # conditioned for PSD Q, and applying an explicit inverse keeps
        # batched and single evaluations bit-identical.
        key = float(gamma)
        inv = self._inv_cache.get(key)
        if inv is None:
            inv = np.linalg.inv(np.eye(self.q_mat.shape[0]) + gamma * self.q_mat)
            self._inv_cache[key] = inv
        return apply_matrix(inv, rhs)

    def prox(self, gamma, x):
        return self._solve(gamma, x - gamma * self.q_vec)

    def minimal_section(self, x):
        return self.grad(_check_finite(x))

    def scaled(self, c):
        return QuadraticProx(c * self.q_mat, c * self.q_vec)

    def __repr__(self):
        return f"QuadraticProx(Q={self.q_mat.tolist()}, q={self.q_vec.tolist()})"


class HingeProx(ProxAtom):
    """weight * sum_i max(0, x_i)."""

    def __init__(self, weight=1.0):
        self.weight = float(weight)
        if self.weight <= 0:
            raise ValueError("hinge weight must be positive")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.weight * np.sum(np.maximum(x, 0.0), axis=-1)

    def prox(self, gamma, x):
        t = gamma * self.weight
        return np.where(x > t, x - t, np.minimum(x, 0.0))

    def minimal_section(self, x):
        x = _check_finite(x)
        return self.weight * (x > 0).astype(float)

    def scaled(self, c):
        return HingeProx(self.weight * c)

    def __repr__(self):
        return f"HingeProx(weight={self.weight})"


class OracleProx(ProxAtom):
    """User-supplied (value, prox) pair.

    The least-norm section is only available as a small-step Yosida estimate,
    flagged through ``approximate_section``.
    """

    approximate_section = True

    def __init__(self, value_fn, prox_fn, name="oracle"):
        self._value_fn = value_fn
        self._prox_fn = prox_fn
        self.name = name

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(self._value_fn(x))
        return np.array([float(self._value_fn(row)) for row in x])

    def prox(self, gamma, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self._prox_fn(gamma, x), dtype=float)
        return np.stack([np.asarray(self._prox_fn(gamma, row), dtype=float) for row in x])

    def __repr__(self):
        return f"OracleProx({self.name})"


class ScaledProx(ProxAtom):
    """c * g for c > 0; prox_(gamma, c*g) = prox_(c*gamma, g)."""

    def __init__(self, base: ProxAtom, c):
        self.base = base
        self.c = float(c)
        if self.c <= 0:
            raise ValueError("scale must be positive")

    @property
    def approximate_section(self):  # type: ignore[override]
        return self.base.approximate_section

    @property
    def differentiable(self):  # type: ignore[override]
        return self.base.differentiable

    @property
    def domain(self):
        return self.base.domain

    def value(self, x):
        return self.c * self.base.value(x)

    def prox(self, gamma, x):
        return self.base.prox(self.c * gamma, x)

    def minimal_section(self, x):
        return self.c * self.base.minimal_section(x)

    def __repr__(self):
        return f"ScaledProx({self.base!r}, c={self.c})"


class ShiftedProx(ProxAtom):
    """g(x - shift); prox is the translated prox of g."""

    def __init__(self, base: ProxAtom, shift):
        self.base = base
        self.shift = np.atleast_1d(np.asarray(shift, dtype=float))

    @property
    def approximate_section(self):  # type: ignore[override]
        return self.base.approximate_section

    @property
    def differentiable(self):  # type: ignore[override]
        return self.base.differentiable

    def value(self, x):
        return self.base.value(np.asarray(x, dtype=float) - self.shift)

    def prox(self, gamma, x):
        return self.shift + self.base.prox(gamma, np.asarray(x, dtype=float) - self.shift)

    def minimal_section(self, x):
        return self.base.minimal_section(np.asarray(x, dtype=float) - self.shift)

    def __repr__(self):
        return f"ShiftedProx({self.base!r}, shift={self.shift.tolist()})"


class AffineAtom(OperatorAtom):
    """A(x) = H x + d with H + H' >= 0; the resolvent is a linear solve."""

    def __init__(self, h, d):
        h = np.atleast_2d(np.asarray(h, dtype=float))
        d = np.atleast_1d(np.asarray(d, dtype=float))
        if h.shape[0] != h.shape[1] or h.shape[0] != d.shape[0]:
            raise ValueError("H must be square and match d")
        sym_min = np.linalg.eigvalsh(0.5 * (h + h.T)).min()
        if sym_min < -CONSTRUCTION_TOL:
            raise ValueError(f"H + H' has negative eigenvalue {2 * sym_min:.3e}; not monotone")
        self.h = h
        self.d = d
        self._inv_cache = {}

    def apply(self, x):
        return apply_matrix(self.h, np.asarray(x, dtype=float)) + self.d

    def _solve(self, gamma, rhs):
        # cached dense inverse per step value; ||(I + gamma*H)^-1|| <= 1 for
        # monotone H, so the explicit inverse is safe at desk scale.
        key = float(gamma)
        inv = self._inv_cache.get(key)
        if inv is None:
            inv = np.linalg.inv(np.eye(self.h.shape[0]) + gamma * self.h)
            self._inv_cache[key] = inv
        return apply_matrix(inv, rhs)

    def resolvent(self, gamma, x):
        _check_gamma(gamma)
        x = np.asarray(x, dtype=float)
        return self._solve(gamma, x - gamma * self.d)

    def yosida(self, gamma, x):
        # (I + gamma H)^-1 (H x + d), same factorization as the resolvent.
        _check_gamma(gamma)
        return self._solve(gamma, self.apply(x))

    def minimal_section(self, x):
        return self.apply(_check_finite(x))

    def __repr__(self):
        return f"AffineAtom(h={self.h.tolist()}, d={self.d.tolist()})"


class IndicatorAtom(OperatorAtom):
    """Normal cone of a closed convex set; the resolvent is the projector."""

    def __init__(self, cset: ConvexSet):
        self.set = cset
        # Projector idempotence check on a few probe points.
        dim = cset.dim or 1
        probes = np.linspace(-3.0, 3.0, 7)[:, None] * np.ones(dim)
        p1 = cset.project(probes)
        p2 = cset.project(p1)
        if np.max(np.linalg.norm(p1 - p2, axis=-1), initial=0.0) > 1e-12:
            raise ValueError("projector is not idempotent to 1e-12")

    @property
    def domain(self):
        return self.set

    def value(self, x):
        d = self.set.distance(x)
        return np.where(d <= 1e-9, 0.0, np.inf)

    def resolvent(self, gamma, x):
        _check_gamma(gamma)
        return self.set.project(np.asarray(x, dtype=float))

    def prox(self, gamma, x):
        return self.set.project(np.asarray(x, dtype=float))

    def minimal_section(self, x):
        x = _check_finite(x)
        self._require_in_domain(x)
        return np.zeros_like(x)

    def __repr__(self):
        return f"IndicatorAtom({self.set!r})"


class SmoothAtom(OperatorAtom):
    """Single-valued continuous monotone map with full domain.

    Used on the forward side of the iteration; it has no generic resolvent.
    """

    def __call__(self, x):
        raise NotImplementedError

    def resolvent(self, gamma, x):
        raise UnsupportedOperatorError(
            "smooth atoms have no generic resolvent; use an affine or prox atom"
        )

    def minimal_section(self, x):
        return self(_check_finite(x))


class LinearMap(SmoothAtom):
    """B(x) = M x + c with M + M' >= 0."""

    def __init__(self, m, c=None):
        m = np.atleast_2d(np.asarray(m, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValueError("M must be square")
        if np.linalg.eigvalsh(0.5 * (m + m.T)).min() < -CONSTRUCTION_TOL:
            raise ValueError("M + M' must be positive semidefinite")
        self.m = m
        self.c = np.zeros(m.shape[0]) if c is None else np.atleast_1d(np.asarray(c, dtype=float))

    def __call__(self, x):
        return apply_matrix(self.m, np.asarray(x, dtype=float)) + self.c

    def __repr__(self):
        return f"LinearMap(m={self.m.tolist()}, c={self.c.tolist()})"


class ZeroMap(SmoothAtom):
    """B identically zero."""

    def __call__(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def __repr__(self):
        return "ZeroMap()"


class GradMap(SmoothAtom):
    """Arbitrary monotone map given as a callable on (N,) or (M, N) arrays."""

    def __init__(self, fn, name="grad"):
        self._fn = fn
        self.name = name

    def __call__(self, x):
        return np.asarray(self._fn(np.asarray(x, dtype=float)), dtype=float)

    def __repr__(self):
        return f"GradMap({self.name})"


def resolvent(atom: OperatorAtom, gamma, x):
    """J_gamma(x) = (I + gamma*A)^-1 (x)."""
    _check_gamma(gamma)
    return atom.resolvent(gamma, _check_finite(x))


def yosida(atom: OperatorAtom, gamma, x):
    """A_gamma(x) = (x - J_gamma(x)) / gamma; lies in A(J_gamma(x))."""
    _check_gamma(gamma)
    return atom.yosida(gamma, _check_finite(x))


def minimal_section(atom: OperatorAtom, x):
    """Least-norm element of A(x); requires x in dom(A)."""
    return atom.minimal_section(x)


def project_domain(descriptor: ConvexSet, x):
    """Projection onto the closure of the operator domain."""
    return descriptor.project(_check_finite(x))
