"""Constant-step stochastic forward-backward chains.

A chain draws an operator pair per step, takes the explicit step with the
forward map and applies the sampled resolvent to the result.  Runs are pure
functions of (model, gamma, x0, generator stream): the same seed always
reproduces the same iterates, and a batch of chains stepped together is
bitwise identical to the chains run one by one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailureError
from .random_model import FiniteSupport, RandomOperatorModel

__all__ = [
    "Trajectory",
    "InterpolatedPath",
    "fb_step",
    "run_chain",
    "run_chain_batch",
    "BatchResult",
    "OccupationAccumulator",
    "trajectory_to_csv",
]

DEFAULT_GAMMA0 = 1.0
MAX_STORED_POINTS = 1_000_000


def _check_gamma(gamma, gamma0):
    if not 0 < gamma <= gamma0:
        raise ValueError(f"gamma must lie in (0, {gamma0}], got {gamma}")


@dataclass(frozen=True)
class Trajectory:
    """A recorded chain with its running average.

    ``steps`` are the stored step indices (all of 0..n_steps unless the
    thinning cap kicked in); ``cesaro_history[k]`` is the exact running mean
    over iterates 0..steps[k].
    """

    gamma: float
    seed: int | None
    x0: np.ndarray
    steps: np.ndarray
    iterates: np.ndarray
    cesaro_history: np.ndarray
    n_steps: int

    @property
    def cesaro(self):
        return self.cesaro_history[-1]

    @property
    def final(self):
        return self.iterates[-1]

    @property
    def dim(self):
        return self.iterates.shape[1]

    @property
    def is_dense(self):
        return len(self.steps) == self.n_steps + 1

    def horizon(self):
        return self.n_steps * self.gamma


class _KahanMean:
    """Compensated running sum so long averages stay exact to ~1 ulp."""

    def __init__(self, shape):
        self.sum = np.zeros(shape)
        self._comp = np.zeros(shape)
        self.count = 0

    def add(self, x):
        y = x - self._comp
        t = self.sum + y
        self._comp = (t - self.sum) - y
        self.sum = t
        self.count += 1

    @property
    def mean(self):
        return self.sum / self.count


class OccupationAccumulator:
    """Counts, per chain and epsilon, iterates farther than eps from a target."""

    def __init__(self, target, eps_list):
        self.target = target
        self.eps = np.asarray(eps_list, dtype=float)
        self.counts = None
        self.total = 0

    def update(self, step, x):
        if x.ndim == 1:
            x = x[None, :]
        if self.counts is None:
            self.counts = np.zeros((x.shape[0], len(self.eps)), dtype=np.int64)
        if isinstance(self.target, np.ndarray):
            d = np.linalg.norm(x - self.target, axis=-1)
        else:
            d = self.target.distance(x)
        self.counts += d[:, None] > self.eps[None, :]
        self.total += 1

    def fractions(self):
        return self.counts / self.total

    def pooled(self):
        """(outside_counts, trials) per epsilon, pooled over chains."""
        k = self.counts.sum(axis=0)
        n = self.counts.shape[0] * self.total
        return k, n


class _StoreAccumulator:
    def __init__(self, n_steps, max_store):
        n_points = n_steps + 1
        if n_points <= max_store:
            stride = 1
        else:
            stride = int(np.ceil(n_points / max_store))
        keep = list(range(0, n_points, stride))
        if keep[-1] != n_steps:
            keep.append(n_steps)
        self.keep = np.array(keep, dtype=np.int64)
        self._keep_set = set(keep)
        self.points = []
        self.cesaro = []

    def update(self, step, x, running_mean):
        if step in self._keep_set:
            self.points.append(x.copy())
            self.cesaro.append(running_mean.copy())


@dataclass
class BatchResult:
    """Final state of a batch run: last iterates and exact running means."""

    gamma: float
    n_steps: int
    final: np.ndarray
    cesaro: np.ndarray


def _run_finite_batch(model, gamma, n_steps, x, rngs, accumulators=(), store=None):
    """Shared stepping core over a (K, N) state block."""
    support: FiniteSupport = model.support
    atoms = support.atoms
    k_chains = x.shape[0]
    u = np.empty((k_chains, n_steps))
    for k, rng in enumerate(rngs):
        u[k] = rng.random(n_steps)
    idx_all = support.index_from_uniform(u)

    mean = _KahanMean(x.shape)
    mean.add(x)
    if store is not None:
        store.update(0, x, mean.mean)
    for acc in accumulators:
        acc.update(0, x)

    single_atom = len(atoms) == 1
    # intentional overflow is how divergence is detected; keep it silent
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n_steps):
            if single_atom:
                sa = atoms[0]
                z = x - gamma * sa.b(x)
                if not np.all(np.isfinite(z)):
                    raise NumericalFailureError(
                        f"non-finite forward step at step {t + 1}", step_index=t + 1
                    )
                x_next = sa.a.resolvent(gamma, z)
            else:
                ii = idx_all[:, t]
                x_next = np.empty_like(x)
                for i, sa in enumerate(atoms):
                    m = ii == i
                    if not m.any():
                        continue
                    sub = x[m]
                    z = sub - gamma * sa.b(sub)
                    if not np.all(np.isfinite(z)):
                        raise NumericalFailureError(
                            f"non-finite forward step at step {t + 1}", step_index=t + 1
                        )
                    x_next[m] = sa.a.resolvent(gamma, z)
            if not np.all(np.isfinite(x_next)):
                raise NumericalFailureError(
                    f"non-finite iterate at step {t + 1}", step_index=t + 1
                )
            x = x_next
            mean.add(x)
            if store is not None:
                store.update(t + 1, x, mean.mean)
            for acc in accumulators:
                acc.update(t + 1, x)
    return x, mean.mean


def fb_step(model: RandomOperatorModel, gamma, x, rng, gamma0=DEFAULT_GAMMA0):
    """One iteration: draw (A, B), return J_gamma(A)(x - gamma*B(x))."""
    _check_gamma(gamma, gamma0)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite entries")
    a, b, _ = model.support.draw(rng)
    z = x - gamma * b(x)
    if not np.all(np.isfinite(z)):
        raise NumericalFailureError("non-finite forward step", step_index=0)
    out = a.resolvent(gamma, z)
    if not np.all(np.isfinite(out)):
        raise NumericalFailureError("non-finite resolvent output", step_index=0)
    return out


def run_chain(
    model: RandomOperatorModel,
    gamma,
    n_steps,
    x0,
    seed=None,
    rng=None,
    gamma0=DEFAULT_GAMMA0,
    max_store=MAX_STORED_POINTS,
) -> Trajectory:
    """Run one chain for ``n_steps`` steps from ``x0``.

    Pass either ``seed`` (fresh generator) or ``rng`` (continues an existing
    stream, which makes restarts bitwise-consistent with longer runs).
    """
    _check_gamma(gamma, gamma0)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 contains non-finite entries")
    if rng is None:
        rng = np.random.default_rng(seed)

    store = _StoreAccumulator(n_steps, max_store)
    if model.is_finite_support:
        try:
            _run_finite_batch(model, gamma, n_steps, x0[None, :], [rng], store=store)
        except NumericalFailureError as err:
            partial = _finish_trajectory(gamma, seed, x0, store, err.step_index - 1)
            raise NumericalFailureError(
                str(err), partial=partial, step_index=err.step_index
            ) from None
    else:
        x = x0[None, :].copy()
        mean = _KahanMean(x.shape)
        mean.add(x)
        store.update(0, x, mean.mean)
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(n_steps):
                a, b, _ = model.support.draw(rng)
                z = x - gamma * b(x)
                if not np.all(np.isfinite(z)):
                    partial = _finish_trajectory(gamma, seed, x0, store, t)
                    raise NumericalFailureError(
                        f"non-finite forward step at step {t + 1}",
                        partial=partial,
                        step_index=t + 1,
                    )
                x_next = a.resolvent(gamma, z)
                if not np.all(np.isfinite(x_next)):
                    partial = _finish_trajectory(gamma, seed, x0, store, t)
                    raise NumericalFailureError(
                        f"non-finite iterate at step {t + 1}",
                        partial=partial,
                        step_index=t + 1,
                    )
                x = x_next
                mean.add(x)
                store.update(t + 1, x, mean.mean)
    return _finish_trajectory(gamma, seed, x0, store, n_steps)


def _finish_trajectory(gamma, seed, x0, store, last_step):
    steps = store.keep[store.keep <= last_step][: len(store.points)]
    return Trajectory(
        gamma=float(gamma),
        seed=seed,
        x0=x0,
        steps=steps,
        iterates=np.concatenate(store.points, axis=0) if store.points else np.empty((0, x0.shape[0])),
        cesaro_history=np.concatenate(store.cesaro, axis=0) if store.cesaro else np.empty((0, x0.shape[0])),
        n_steps=int(last_step),
    )


def run_chain_batch(
    model: RandomOperatorModel,
    gamma,
    n_steps,
    x0s,
    rngs,
    accumulators=(),
    gamma0=DEFAULT_GAMMA0,
) -> BatchResult:
    """Run many finite-support chains in lockstep.

    Chain ``k`` consumes only its own generator ``rngs[k]``, so results are
    bitwise identical to running each chain alone with ``run_chain``.
    Full paths are not stored; pass accumulators for streaming statistics.
    """
    _check_gamma(gamma, gamma0)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not model.is_finite_support:
        raise ValueError("batch runs require a finite-support model")
    x0s = np.asarray(x0s, dtype=float)
    if x0s.ndim != 2 or x0s.shape[0] != len(rngs):
        raise ValueError("x0s must be (K, N) with one rng per chain")
    final, cesaro = _run_finite_batch(model, gamma, n_steps, x0s.copy(), rngs, accumulators)
    return BatchResult(gamma=float(gamma), n_steps=int(n_steps), final=final, cesaro=cesaro)


@dataclass(frozen=True)
class InterpolatedPath:
    """Piecewise-linear interpolation of a trajectory in rescaled time t = k*gamma."""

    trajectory: Trajectory

    def __post_init__(self):
        if not self.trajectory.is_dense:
            raise ValueError("interpolation needs a trajectory with every step stored")

    def at(self, t):
        return self.at_many(np.array([float(t)]))[0]

    def at_many(self, ts):
        traj = self.trajectory
        ts = np.asarray(ts, dtype=float)
        n = traj.n_steps
        horizon = n * traj.gamma
        if np.any(ts < -1e-12) or np.any(ts > horizon * (1 + 1e-12) + 1e-300):
            raise ValueError(f"time out of range [0, {horizon}]")
        pos = np.clip(ts / traj.gamma, 0.0, n)
        # Snap to the knot when t is a step multiple up to rounding, so knot
        # evaluations reproduce the stored iterate bit for bit.
        rounded = np.round(pos)
        pos = np.where(np.abs(pos - rounded) < 1e-9, rounded, pos)
        k = pos.astype(np.int64)
        frac = pos - k
        k = np.minimum(k, n)
        kp1 = np.minimum(k + 1, n)
        pts = traj.iterates
        return pts[k] + frac[:, None] * (pts[kp1] - pts[k])


def _fmt(v):
    return repr(float(v))


def trajectory_to_csv(traj: Trajectory, path):
    """Write ``step,t,x_1..x_N,cesaro_1..cesaro_N`` rows with repr formatting."""
    n = traj.dim
    header = (
        ["step", "t"]
        + [f"x_{j + 1}" for j in range(n)]
        + [f"cesaro_{j + 1}" for j in range(n)]
    )
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for k, step in enumerate(traj.steps):
            row = [str(int(step)), _fmt(step * traj.gamma)]
            row += [_fmt(v) for v in traj.iterates[k]]
            row += [_fmt(v) for v in traj.cesaro_history[k]]
            fh.write(",".join(row) + "\n")
