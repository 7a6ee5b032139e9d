"""Builtin experiment scenarios.

Each builder returns a ScenarioConfig whose measure section is plain data,
so every builtin can be dumped to TOML, edited, and rerun.  Zero witnesses
and selection vectors are worked out analytically in the builders and
revalidated at load time.
"""

from __future__ import annotations

import numpy as np

from .config import DiagnosticsConfig, ScenarioConfig, model_to_measure
from .operators import L1Prox, LinearMap
from .random_model import ProxGradScenario, build_prox_grad_model
from .sets import Halfspace

__all__ = [
    "affine1d_config",
    "affine_rotational_config",
    "lasso_constrained_config",
    "bounded_domain_config",
    "lasso_prox_grad_scenario",
    "builtin_scenarios",
]


def affine1d_config() -> ScenarioConfig:
    """Scalar random affine operators, mean slope 1 and mean offset -1.

    The mean operator vanishes at 1; the per-atom selections there are
    -2 and 2, so the chain keeps jittering around the zero at any fixed step.
    """
    measure = {
        "type": "finite",
        "x_star": [1.0],
        "demipositive": True,
        "atoms": [
            {
                "weight": 0.5,
                "a": {"kind": "affine", "h": [[0.5]], "d": [-2.5]},
                "b": {"kind": "zero"},
                "domain": {"kind": "full"},
                "phi": [-2.0],
            },
            {
                "weight": 0.5,
                "a": {"kind": "affine", "h": [[1.5]], "d": [0.5]},
                "b": {"kind": "zero"},
                "domain": {"kind": "full"},
                "phi": [2.0],
            },
        ],
    }
    return ScenarioConfig(
        name="affine1d",
        dimension=1,
        measure=measure,
        init={"kind": "gaussian", "mean": [0.0], "std": 1.0},
        gammas=(0.1, 0.02),
        n_steps=2000,
        seeds=tuple(range(8)),
        master_seed=20240117,
        diagnostics=DiagnosticsConfig(
            drift=True,
            occupation_eps=(0.25,),
            shadowing=True,
            shadow_t=3.0,
            shadow_h=1e-3,
            shadow_n_max=3,
        ),
    )


def affine_rotational_config() -> ScenarioConfig:
    """Nonsymmetric planar affine atoms with positive-definite mean symmetric part."""
    measure = {
        "type": "finite",
        "x_star": [1.0, 0.0],
        "demipositive": True,
        "atoms": [
            {
                "weight": 0.5,
                "a": {"kind": "affine", "h": [[1.0, 2.0], [-2.0, 1.0]], "d": [1.0, -1.0]},
                "b": {"kind": "zero"},
                "domain": {"kind": "full"},
                "phi": [2.0, -3.0],
            },
            {
                "weight": 0.5,
                "a": {"kind": "affine", "h": [[1.0, -1.0], [1.0, 1.0]], "d": [-3.0, 2.0]},
                "b": {"kind": "zero"},
                "domain": {"kind": "full"},
                "phi": [-2.0, 3.0],
            },
        ],
    }
    return ScenarioConfig(
        name="affine-rotational",
        dimension=2,
        measure=measure,
        init={"kind": "gaussian", "mean": [0.0, 0.0], "std": 1.0},
        gammas=(0.1, 0.02),
        n_steps=2000,
        seeds=tuple(range(8)),
        master_seed=20240118,
        diagnostics=DiagnosticsConfig(
            drift=True,
            psi_growth=True,
            occupation_eps=(0.5,),
        ),
    )


def lasso_prox_grad_scenario() -> ProxGradScenario:
    """Randomized proximal-gradient problem behind the lasso-constrained builtin.

    Two quadratic data pieces 0.5||x - a_u||^2, an l1 penalty 0.1||x||_1, and
    two halfspace constraints x_1 <= 0.75, x_2 <= 0.5.  The constrained
    minimizer is (0.75, 0): the first constraint is active there with
    multiplier 0.15, the l1 kink holds coordinate two at zero.
    """
    eye = np.eye(2)
    grad1 = LinearMap(eye, [-2.0, -1.0])  # grad of 0.5||x - (2, 1)||^2
    grad2 = LinearMap(eye, [0.0, 1.0])  # grad of 0.5||x - (0, -1)||^2
    l1 = L1Prox(0.1)
    return ProxGradScenario(
        smooth=((0.5, grad1), (0.5, grad2)),
        nonsmooth=((0.5, l1), (0.5, l1)),
        constraints=(Halfspace([1.0, 0.0], 0.75), Halfspace([0.0, 1.0], 0.5)),
        alpha=np.array([0.5, 0.25, 0.25]),
        feasible_point=np.array([0.0, 0.0]),
        x_star=np.array([0.75, 0.0]),
        h_subgradients=(np.array([0.1, 0.0]), np.array([0.1, 0.0])),
        constraint_normals=(np.array([0.6, 0.0]), np.array([0.0, 0.0])),
    )


def lasso_constrained_config() -> ScenarioConfig:
    model = build_prox_grad_model(lasso_prox_grad_scenario())
    measure = model_to_measure(model, feasible_point=[0.0, 0.0])
    return ScenarioConfig(
        name="lasso-constrained",
        dimension=2,
        measure=measure,
        init={"kind": "point", "value": [0.0, 0.0]},
        gammas=(0.1, 0.02),
        n_steps=5000,
        seeds=tuple(range(8)),
        master_seed=20240119,
        diagnostics=DiagnosticsConfig(
            drift=True,
            occupation_eps=(0.1,),
            shadowing=True,
            shadow_t=3.0,
            shadow_h=1e-3,
            shadow_n_max=3,
            regularity=True,
        ),
    )


def bounded_domain_config() -> ScenarioConfig:
    """Indicator atoms with a bounded intersection and shifted identity drifts.

    The mean drift x - (0.5, 0.5) vanishes at (0.5, 0.5), which lies inside
    both sets, so the witness has zero normal-cone selections.
    """
    measure = {
        "type": "finite",
        "x_star": [0.5, 0.5],
        "demipositive": True,
        "feasible_point": [0.0, 0.0],
        "atoms": [
            {
                "weight": 0.5,
                "a": {"kind": "indicator", "set": {"kind": "ball", "center": [0.3, 0.0], "radius": 1.0}},
                "b": {"kind": "linear", "m": [[1.0, 0.0], [0.0, 1.0]], "c": [-2.0, 0.0]},
                "domain": {"kind": "ball", "center": [0.3, 0.0], "radius": 1.0},
                "phi": [0.0, 0.0],
            },
            {
                "weight": 0.5,
                "a": {"kind": "indicator", "set": {"kind": "box", "low": [-0.8, -0.8], "high": [0.8, 0.8]}},
                "b": {"kind": "linear", "m": [[1.0, 0.0], [0.0, 1.0]], "c": [1.0, -1.0]},
                "domain": {"kind": "box", "low": [-0.8, -0.8], "high": [0.8, 0.8]},
                "phi": [0.0, 0.0],
            },
        ],
    }
    return ScenarioConfig(
        name="bounded-domain",
        dimension=2,
        measure=measure,
        init={"kind": "gaussian", "mean": [0.0, 0.0], "std": 0.5},
        gammas=(0.1, 0.02),
        n_steps=2000,
        seeds=tuple(range(8)),
        master_seed=20240120,
        diagnostics=DiagnosticsConfig(
            drift=True,
            occupation_eps=(0.2,),
            regularity=True,
        ),
    )


def builtin_scenarios() -> dict:
    """Name -> config map of the shipped scenarios."""
    configs = [
        affine1d_config(),
        affine_rotational_config(),
        lasso_constrained_config(),
        bounded_domain_config(),
    ]
    return {c.name: c for c in configs}
