"""Closed convex set descriptors with exact Euclidean projectors.

Every set works on points of shape ``(N,)`` or batches ``(M, N)``; projectors
are exact (closed form), so distances computed from them are exact too.
"""

from __future__ import annotations

import numpy as np

from .errors import NoConvergenceError

__all__ = [
    "ConvexSet",
    "FullSpace",
    "Box",
    "Halfspace",
    "Ball",
    "AffineSubspace",
    "project_intersection",
    "intersection_distance",
    "apply_matrix",
    "row_dot",
]


def apply_matrix(mat, x):
    """Rows of ``mat @ x[i]`` with rounding independent of the batch width.

    BLAS matmul kernels round differently depending on how many rows they
    process at once, which would break the bit-reproducibility contract of
    batched chain runs.  Broadcasting + a pairwise sum over the contraction
    axis keeps the reduction tree a function of the contraction length only.
    """
    mat = np.asarray(mat, dtype=float)
    x = np.asarray(x, dtype=float)
    return (x[..., None, :] * mat).sum(axis=-1)


def row_dot(x, v):
    """Row-wise inner products with width-independent rounding."""
    return (np.asarray(x, dtype=float) * v).sum(axis=-1)


class ConvexSet:
    """Base class: a closed convex subset of R^N with an exact projector."""

    #: ambient dimension; None when the set works in any dimension
    dim: int | None = None

    def project(self, x):
        raise NotImplementedError

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - self.project(x), axis=-1)

    def contains(self, x, tol=1e-10):
        return bool(np.all(self.distance(x) <= tol))

    def is_full(self):
        return False


class FullSpace(ConvexSet):
    """R^N itself; the projector is the identity."""

    def project(self, x):
        return np.asarray(x, dtype=float).copy()

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def is_full(self):
        return True

    def __repr__(self):
        return "FullSpace()"


class Box(ConvexSet):
    """Axis-aligned box ``{x : low <= x <= high}``; entries may be +-inf."""

    def __init__(self, low, high):
        self.low = np.atleast_1d(np.asarray(low, dtype=float))
        self.high = np.atleast_1d(np.asarray(high, dtype=float))
        if self.low.shape != self.high.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(self.low > self.high):
            raise ValueError("box requires low <= high")
        self.dim = self.low.shape[-1]

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.low, self.high)

    def __repr__(self):
        return f"Box(low={self.low.tolist()}, high={self.high.tolist()})"


class Halfspace(ConvexSet):
    """Halfspace ``{x : <normal, x> <= offset}``."""

    def __init__(self, normal, offset):
        self.normal = np.atleast_1d(np.asarray(normal, dtype=float))
        self.offset = float(offset)
        nn = float(self.normal @ self.normal)
        if nn <= 0.0:
            raise ValueError("halfspace normal must be nonzero")
        self._inv_nn = 1.0 / nn
        self.dim = self.normal.shape[-1]

    def project(self, x):
        x = np.asarray(x, dtype=float)
        excess = np.maximum(row_dot(x, self.normal) - self.offset, 0.0)
        return x - (excess * self._inv_nn)[..., None] * self.normal

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        nrm = np.sqrt(1.0 / self._inv_nn)
        return np.maximum(row_dot(x, self.normal) - self.offset, 0.0) / nrm

    def __repr__(self):
        return f"Halfspace(normal={self.normal.tolist()}, offset={self.offset})"


class Ball(ConvexSet):
    """Euclidean ball ``{x : ||x - center|| <= radius}``."""

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")
        self.dim = self.center.shape[-1]

    def project(self, x):
        x = np.asarray(x, dtype=float)
        delta = x - self.center
        nrm = np.linalg.norm(delta, axis=-1)
        scale = np.ones_like(nrm)
        outside = nrm > self.radius
        scale = np.where(outside, self.radius / np.where(nrm > 0, nrm, 1.0), scale)
        return self.center + scale[..., None] * delta

    def distance(self, x):
        x = np.asarray(x, dtype=float)
        nrm = np.linalg.norm(x - self.center, axis=-1)
        return np.maximum(nrm - self.radius, 0.0)

    def __repr__(self):
        return f"Ball(center={self.center.tolist()}, radius={self.radius})"


class AffineSubspace(ConvexSet):
    """Affine subspace ``{x : A x = b}``; projector via the pseudoinverse."""

    def __init__(self, a, b):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.a.shape[0] != self.b.shape[0]:
            raise ValueError("A and b have inconsistent row counts")
        self._pinv = np.linalg.pinv(self.a)
        self.dim = self.a.shape[1]

    def project(self, x):
        x = np.asarray(x, dtype=float)
        resid = apply_matrix(self.a, x) - self.b
        return x - apply_matrix(self._pinv, resid)

    def __repr__(self):
        return f"AffineSubspace(a={self.a.tolist()}, b={self.b.tolist()})"


def project_intersection(sets, x, tol=1e-10, max_cycles=20000):
    """Nearest point of the intersection of ``sets`` (Dykstra's scheme).

    Works on batches ``(M, N)``.  Plain cyclic projections only find *some*
    intersection point; the correction terms here recover the nearest one,
    which the distance-based diagnostics need.
    """
    sets = [s for s in sets if not s.is_full()]
    x = np.asarray(x, dtype=float)
    if not sets:
        return x.copy()
    if len(sets) == 1:
        return sets[0].project(x)

    u = x.copy()
    corrections = [np.zeros_like(u) for _ in sets]
    for _ in range(max_cycles):
        u_prev = u
        for i, s in enumerate(sets):
            v = u + corrections[i]
            u = s.project(v)
            corrections[i] = v - u
        change = np.max(np.linalg.norm(u - u_prev, axis=-1))
        feas = max(np.max(s.distance(u)) for s in sets)
        if change <= tol and feas <= tol:
            return u
    raise NoConvergenceError(
        "intersection projection did not converge",
        residual=float(max(np.max(s.distance(u)) for s in sets)),
        iterations=max_cycles,
    )


def intersection_distance(sets, x, tol=1e-10, max_cycles=20000):
    """Distance from ``x`` to the intersection of ``sets``."""
    p = project_intersection(sets, x, tol=tol, max_cycles=max_cycles)
    return np.linalg.norm(np.asarray(x, dtype=float) - p, axis=-1)
