"""Scenario configuration: dataclasses, validation, TOML round-trip, model build.

A scenario is fully described by plain data (the ``measure`` and ``init``
dicts follow a small documented schema), so configs can be written by hand
in TOML, validated with field-level error paths, and rebuilt into operator
models deterministically.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, asdict

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .errors import ScenarioValidationError
from .operators import (
    AffineAtom,
    HingeProx,
    IndicatorAtom,
    L1Prox,
    LinearMap,
    OperatorAtom,
    QuadraticProx,
    SmoothAtom,
    ZeroMap,
)
from .random_model import FiniteSupport, GenericSampler, RandomOperatorModel, SupportAtom
from .sets import AffineSubspace, Ball, Box, ConvexSet, FullSpace, Halfspace

__all__ = [
    "DiagnosticsConfig",
    "ScenarioConfig",
    "validate_config",
    "build_model",
    "build_set",
    "draw_initial_point",
    "model_to_measure",
    "load_toml",
    "dump_toml",
    "config_from_dict",
    "config_to_dict",
]


@dataclass
class DiagnosticsConfig:
    ergodic: bool = True
    drift: bool = False
    drift_gammas: tuple = (0.5, 0.1, 0.01)
    drift_samples: int = 100
    drift_radius: float = 2.0
    psi_growth: bool = False
    growth_radii: tuple = (10.0, 100.0, 1000.0)
    growth_gamma_grid: tuple = (1.0, 0.5, 0.1, 0.01)
    growth_directions: int = 16
    occupation_eps: tuple = ()
    shadowing: bool = False
    shadow_t: float = 3.0
    shadow_h: float = 1e-3
    shadow_n_max: int = 3
    shadow_tol: float = 1e-10
    regularity: bool = False
    regularity_low: float = -2.0
    regularity_high: float = 2.0
    regularity_samples: int = 10_000


@dataclass
class ScenarioConfig:
    name: str
    dimension: int
    measure: dict
    init: dict
    gammas: tuple
    n_steps: int
    seeds: tuple
    master_seed: int = 0
    gamma0: float = 1.0
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)


# ---------------------------------------------------------------------------
# Schema helpers
# ---------------------------------------------------------------------------

_SET_KINDS = ("full", "box", "halfspace", "ball", "affine_subspace")
_A_KINDS = ("affine", "l1", "quadratic", "hinge", "indicator", "zero")
_B_KINDS = ("zero", "linear")
_INIT_KINDS = ("point", "gaussian", "uniform")


def _fail(path, msg):
    raise ScenarioValidationError(path, msg)


def _vec(value, dim, path, allow_inf=False):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (dim,):
        _fail(path, f"expected a length-{dim} vector, got shape {arr.shape}")
    if allow_inf:
        if np.any(np.isnan(arr)):
            _fail(path, "vector has NaN entries")
    elif not np.all(np.isfinite(arr)):
        _fail(path, "vector has non-finite entries")
    return arr


def _mat(value, dim, path):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (dim, dim):
        _fail(path, f"expected a {dim}x{dim} matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        _fail(path, "matrix has non-finite entries")
    return arr


def build_set(spec, dim, path="set") -> ConvexSet:
    if not isinstance(spec, dict) or "kind" not in spec:
        _fail(path, "set spec must be a table with a 'kind' key")
    kind = spec["kind"]
    if kind == "full":
        return FullSpace()
    if kind == "box":
        return Box(
            _vec(spec.get("low"), dim, f"{path}.low", allow_inf=True),
            _vec(spec.get("high"), dim, f"{path}.high", allow_inf=True),
        )
    if kind == "halfspace":
        return Halfspace(_vec(spec.get("normal"), dim, f"{path}.normal"), float(spec.get("offset", 0.0)))
    if kind == "ball":
        return Ball(_vec(spec.get("center"), dim, f"{path}.center"), float(spec.get("radius", 1.0)))
    if kind == "affine_subspace":
        a = np.asarray(spec.get("a"), dtype=float)
        if a.ndim != 2 or a.shape[1] != dim:
            _fail(f"{path}.a", f"expected a matrix with {dim} columns")
        b = np.asarray(spec.get("b"), dtype=float)
        return AffineSubspace(a, b)
    _fail(path, f"unknown set kind {kind!r}; expected one of {_SET_KINDS}")


def _build_a_atom(spec, dim, path) -> OperatorAtom:
    if not isinstance(spec, dict) or "kind" not in spec:
        _fail(path, "atom spec must be a table with a 'kind' key")
    kind = spec["kind"]
    try:
        if kind == "affine":
            return AffineAtom(_mat(spec.get("h"), dim, f"{path}.h"), _vec(spec.get("d"), dim, f"{path}.d"))
        if kind == "l1":
            return L1Prox(float(spec.get("weight", 1.0)))
        if kind == "hinge":
            return HingeProx(float(spec.get("weight", 1.0)))
        if kind == "quadratic":
            return QuadraticProx(_mat(spec.get("q"), dim, f"{path}.q"), _vec(spec.get("lin"), dim, f"{path}.lin"))
        if kind == "zero":
            return QuadraticProx(np.zeros((dim, dim)), np.zeros(dim))
        if kind == "indicator":
            return IndicatorAtom(build_set(spec.get("set"), dim, f"{path}.set"))
    except ScenarioValidationError:
        raise
    except ValueError as err:
        _fail(path, str(err))
    _fail(path, f"unknown backward-atom kind {kind!r}; expected one of {_A_KINDS}")


def _build_b_atom(spec, dim, path) -> SmoothAtom:
    if spec is None:
        return ZeroMap()
    if not isinstance(spec, dict) or "kind" not in spec:
        _fail(path, "atom spec must be a table with a 'kind' key")
    kind = spec["kind"]
    try:
        if kind == "zero":
            return ZeroMap()
        if kind == "linear":
            c = spec.get("c")
            return LinearMap(
                _mat(spec.get("m"), dim, f"{path}.m"),
                None if c is None else _vec(c, dim, f"{path}.c"),
            )
    except ScenarioValidationError:
        raise
    except ValueError as err:
        _fail(path, str(err))
    _fail(path, f"unknown forward-atom kind {kind!r}; expected one of {_B_KINDS}")


def _canonical(spec):
    """Hashable form of an atom spec, for sharing identical instances."""
    if isinstance(spec, dict):
        return tuple(sorted((k, _canonical(v)) for k, v in spec.items()))
    if isinstance(spec, (list, tuple)):
        return tuple(_canonical(v) for v in spec)
    return spec


# ---------------------------------------------------------------------------
# Sampler registry
# ---------------------------------------------------------------------------


def _affine_gaussian_sampler(params, dim):
    h = _mat(params.get("h"), dim, "measure.params.h")
    d_mean = _vec(params.get("d_mean"), dim, "measure.params.d_mean")
    d_std = float(params.get("d_std", 1.0))
    full = FullSpace()
    zero = ZeroMap()

    def draw(rng):
        d = d_mean + d_std * rng.standard_normal(dim)
        return AffineAtom(h, d), zero, full

    return GenericSampler(draw, name="affine_gaussian")


SAMPLER_BUILTINS = {"affine_gaussian": _affine_gaussian_sampler}


# ---------------------------------------------------------------------------
# Validation and build
# ---------------------------------------------------------------------------


def validate_config(cfg: ScenarioConfig):
    if not cfg.name:
        _fail("name", "scenario name must be nonempty")
    if int(cfg.dimension) < 1:
        _fail("dimension", "dimension must be >= 1")
    if len(cfg.gammas) == 0:
        _fail("gammas", "gamma list must be nonempty")
    for i, g in enumerate(cfg.gammas):
        if not 0 < float(g) <= cfg.gamma0:
            _fail(f"gammas[{i}]", f"gamma must lie in (0, {cfg.gamma0}]")
    if int(cfg.n_steps) < 1:
        _fail("n_steps", "n_steps must be >= 1")
    if len(cfg.seeds) == 0:
        _fail("seeds", "seed list must be nonempty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        _fail("seeds", "seeds must be distinct")
    for i, s in enumerate(cfg.seeds):
        if int(s) < 0:
            _fail(f"seeds[{i}]", "seeds must be nonnegative integers")

    init = cfg.init
    if not isinstance(init, dict) or init.get("kind") not in _INIT_KINDS:
        _fail("init.kind", f"expected one of {_INIT_KINDS}")
    dim = int(cfg.dimension)
    if init["kind"] == "point":
        _vec(init.get("value"), dim, "init.value")
    elif init["kind"] == "gaussian":
        _vec(init.get("mean"), dim, "init.mean")
        if float(init.get("std", 1.0)) < 0:
            _fail("init.std", "std must be nonnegative")
    else:
        low = _vec(init.get("low"), dim, "init.low")
        high = _vec(init.get("high"), dim, "init.high")
        if np.any(low > high):
            _fail("init.low", "uniform init needs low <= high")

    measure = cfg.measure
    mtype = measure.get("type")
    if mtype == "finite":
        atoms = measure.get("atoms", [])
        if not atoms:
            _fail("measure.atoms", "finite support needs at least one atom")
        weights = []
        has_phi = ["phi" in a for a in atoms]
        if any(has_phi) and not all(has_phi):
            _fail("measure.atoms", "phi must be supplied for every atom or none")
        for i, a in enumerate(atoms):
            w = float(a.get("weight", -1.0))
            if w <= 0:
                _fail(f"measure.atoms[{i}].weight", "weight must be positive")
            weights.append(w)
            _build_a_atom(a.get("a"), dim, f"measure.atoms[{i}].a")
            _build_b_atom(a.get("b"), dim, f"measure.atoms[{i}].b")
            if "domain" in a:
                build_set(a["domain"], dim, f"measure.atoms[{i}].domain")
            if "phi" in a:
                _vec(a["phi"], dim, f"measure.atoms[{i}].phi")
        if abs(sum(weights) - 1.0) > 1e-12:
            _fail("measure.atoms", f"weights sum to {sum(weights)!r}, expected 1")
    elif mtype == "sampler":
        name = measure.get("builtin")
        if name not in SAMPLER_BUILTINS:
            _fail("measure.builtin", f"unknown sampler {name!r}; known: {sorted(SAMPLER_BUILTINS)}")
        SAMPLER_BUILTINS[name](measure.get("params", {}), dim)
    else:
        _fail("measure.type", "expected 'finite' or 'sampler'")
    if "x_star" in measure and measure["x_star"] is not None:
        _vec(measure["x_star"], dim, "measure.x_star")
    if "feasible_point" in measure and measure["feasible_point"] is not None:
        _vec(measure["feasible_point"], dim, "measure.feasible_point")

    diag = cfg.diagnostics
    for i, e in enumerate(diag.occupation_eps):
        if not float(e) > 0:
            _fail(f"diagnostics.occupation_eps[{i}]", "epsilon must be positive")
    if diag.drift:
        for i, g in enumerate(diag.drift_gammas):
            if not 0 < float(g) <= cfg.gamma0:
                _fail(f"diagnostics.drift_gammas[{i}]", f"gamma must lie in (0, {cfg.gamma0}]")
    if diag.shadowing:
        horizon = cfg.n_steps * min(float(g) for g in cfg.gammas)
        if diag.shadow_t > horizon * (1 + 1e-12):
            _fail("diagnostics.shadow_t", f"exceeds the shortest chain horizon {horizon:g}")
        if diag.shadow_n_max > diag.shadow_t + 1e-12:
            _fail("diagnostics.shadow_n_max", "must not exceed shadow_t")
    return True


def build_model(cfg: ScenarioConfig) -> RandomOperatorModel:
    """Construct the operator model described by the config's measure section."""
    dim = int(cfg.dimension)
    measure = cfg.measure
    x_star = measure.get("x_star")
    demipositive = measure.get("demipositive")
    if measure.get("type") == "sampler":
        sampler = SAMPLER_BUILTINS[measure["builtin"]](measure.get("params", {}), dim)
        return RandomOperatorModel(
            support=sampler, x_star=x_star, demipositive=demipositive
        )
    atoms = []
    phi = []
    a_cache = {}
    for i, spec in enumerate(measure["atoms"]):
        key = _canonical(spec.get("a"))
        if key not in a_cache:
            a_cache[key] = _build_a_atom(spec.get("a"), dim, f"measure.atoms[{i}].a")
        a = a_cache[key]
        b = _build_b_atom(spec.get("b"), dim, f"measure.atoms[{i}].b")
        if "domain" in spec:
            dom = build_set(spec["domain"], dim, f"measure.atoms[{i}].domain")
        elif isinstance(a, IndicatorAtom):
            dom = a.set
        else:
            dom = FullSpace()
        atoms.append(SupportAtom(weight=float(spec["weight"]), a=a, b=b, domain=dom))
        if "phi" in spec:
            phi.append(np.asarray(spec["phi"], dtype=float))
    if not phi and x_star is not None and all(isinstance(sa.a, AffineAtom) for sa in atoms):
        # affine atoms have a unique selection at the witness: H(s) x* + d(s)
        xs = np.asarray(x_star, dtype=float)
        phi = [sa.a.apply(xs) for sa in atoms]
    return RandomOperatorModel(
        support=FiniteSupport(atoms),
        x_star=x_star,
        phi=tuple(phi) if phi else None,
        demipositive=demipositive,
    )


def draw_initial_point(init, rng, dim):
    """Draw x0 from the configured initial distribution (finite 2nd moment)."""
    kind = init["kind"]
    if kind == "point":
        return np.asarray(init["value"], dtype=float).copy()
    if kind == "gaussian":
        return np.asarray(init["mean"], dtype=float) + float(init.get("std", 1.0)) * rng.standard_normal(dim)
    return rng.uniform(np.asarray(init["low"], dtype=float), np.asarray(init["high"], dtype=float))


# ---------------------------------------------------------------------------
# Serialization of models back to measure dicts (for TOML dumps)
# ---------------------------------------------------------------------------


def _set_to_spec(s: ConvexSet):
    if isinstance(s, FullSpace):
        return {"kind": "full"}
    if isinstance(s, Box):
        return {"kind": "box", "low": s.low.tolist(), "high": s.high.tolist()}
    if isinstance(s, Halfspace):
        return {"kind": "halfspace", "normal": s.normal.tolist(), "offset": s.offset}
    if isinstance(s, Ball):
        return {"kind": "ball", "center": s.center.tolist(), "radius": s.radius}
    if isinstance(s, AffineSubspace):
        return {"kind": "affine_subspace", "a": s.a.tolist(), "b": s.b.tolist()}
    raise ScenarioValidationError("measure", f"set {s!r} has no config form")


def _a_to_spec(a: OperatorAtom):
    if isinstance(a, AffineAtom):
        return {"kind": "affine", "h": a.h.tolist(), "d": a.d.tolist()}
    if isinstance(a, L1Prox):
        return {"kind": "l1", "weight": a.weight}
    if isinstance(a, HingeProx):
        return {"kind": "hinge", "weight": a.weight}
    if isinstance(a, QuadraticProx):
        return {"kind": "quadratic", "q": a.q_mat.tolist(), "lin": a.q_vec.tolist()}
    if isinstance(a, IndicatorAtom):
        return {"kind": "indicator", "set": _set_to_spec(a.set)}
    raise ScenarioValidationError("measure", f"atom {a!r} has no config form")


def _b_to_spec(b: SmoothAtom):
    if isinstance(b, ZeroMap):
        return {"kind": "zero"}
    if isinstance(b, LinearMap):
        return {"kind": "linear", "m": b.m.tolist(), "c": b.c.tolist()}
    raise ScenarioValidationError("measure", f"forward map {b!r} has no config form")


def model_to_measure(model: RandomOperatorModel, feasible_point=None):
    """Serialize a finite-support model to the measure-dict schema."""
    atoms = []
    phis = model.phi if model.phi is not None else [None] * len(model.support.atoms)
    for sa, phi in zip(model.support.atoms, phis):
        entry = {
            "weight": float(sa.weight),
            "a": _a_to_spec(sa.a),
            "b": _b_to_spec(sa.b),
            "domain": _set_to_spec(sa.domain),
        }
        if phi is not None:
            entry["phi"] = np.asarray(phi, dtype=float).tolist()
        atoms.append(entry)
    measure = {"type": "finite", "atoms": atoms}
    if model.x_star is not None:
        measure["x_star"] = model.x_star.tolist()
    if model.demipositive is not None:
        measure["demipositive"] = bool(model.demipositive)
    if feasible_point is not None:
        measure["feasible_point"] = list(map(float, feasible_point))
    return measure


# ---------------------------------------------------------------------------
# TOML round-trip
# ---------------------------------------------------------------------------


def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["gammas"] = [float(g) for g in cfg.gammas]
    d["seeds"] = [int(s) for s in cfg.seeds]
    diag = d["diagnostics"]
    for key in ("drift_gammas", "growth_radii", "growth_gamma_grid", "occupation_eps"):
        diag[key] = [float(v) for v in diag[key]]
    return d


def config_from_dict(data: dict) -> ScenarioConfig:
    data = dict(data)
    diag_data = data.pop("diagnostics", {})
    known = set(DiagnosticsConfig.__dataclass_fields__)
    unknown = set(diag_data) - known
    if unknown:
        _fail(f"diagnostics.{sorted(unknown)[0]}", "unknown diagnostics field")
    diag = DiagnosticsConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in diag_data.items()})
    required = {"name", "dimension", "measure", "init", "gammas", "n_steps", "seeds"}
    missing = required - set(data)
    if missing:
        _fail(sorted(missing)[0], "missing required field")
    known_top = set(ScenarioConfig.__dataclass_fields__) - {"diagnostics"}
    unknown_top = set(data) - known_top
    if unknown_top:
        _fail(sorted(unknown_top)[0], "unknown config field")
    return ScenarioConfig(
        name=str(data["name"]),
        dimension=int(data["dimension"]),
        measure=data["measure"],
        init=data["init"],
        gammas=tuple(float(g) for g in data["gammas"]),
        n_steps=int(data["n_steps"]),
        seeds=tuple(int(s) for s in data["seeds"]),
        master_seed=int(data.get("master_seed", 0)),
        gamma0=float(data.get("gamma0", 1.0)),
        diagnostics=diag,
    )


def load_toml(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        data = _toml.load(fh)
    return config_from_dict(data)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, dict):
        inner = ", ".join(f"{k} = {_toml_value(val)}" for k, val in v.items())
        return "{" + inner + "}"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def dump_toml(cfg: ScenarioConfig) -> str:
    """Serialize a config to TOML (inverse of load_toml for our schema)."""
    d = config_to_dict(cfg)
    lines = []
    for key in ("name", "dimension", "gammas", "n_steps", "seeds", "master_seed", "gamma0"):
        lines.append(f"{key} = {_toml_value(d[key])}")
    lines.append("")
    lines.append("[init]")
    for k, v in d["init"].items():
        lines.append(f"{k} = {_toml_value(v)}")
    lines.append("")
    lines.append("[measure]")
    measure = d["measure"]
    for k, v in measure.items():
        if k != "atoms":
            lines.append(f"{k} = {_toml_value(v)}")
    for atom in measure.get("atoms", []):
        lines.append("")
        lines.append("[[measure.atoms]]")
        for k, v in atom.items():
            lines.append(f"{k} = {_toml_value(v)}")
    lines.append("")
    lines.append("[diagnostics]")
    for k, v in d["diagnostics"].items():
        lines.append(f"{k} = {_toml_value(v)}")
    lines.append("")
    return "\n".join(lines)
