"""Synthetic unit generation for the simulation scenarios.

Units are i.i.d. draws of (covariates, both potential outcomes, an
additional covariate z*). Covariates come from a correlated trivariate
Gaussian pushed through three monotone transforms so that x1 is a
three-point discrete variable and x2, x3 are bounded in [-1, 1].
"""
from __future__ import annotations

import statistics
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr


class ScenarioId(str, Enum):
    A = "A"
    B = "B"
    DISCRETE = "DiscreteTest"


# per-arm outcome coefficients: (intercept, x1 slope, x2 slope, x3 slope)
_ARM_COEFFS = {
    ScenarioId.A: ((4.5, 4.7, 2.9, 1.4), (7.5, 1.7, 2.9, 1.4)),
    ScenarioId.B: ((4.5, 4.7, -0.6, -0.6), (7.5, 1.7, 2.9, 1.4)),
    # discrete test scenario: x2 = x3 = 0, outcome equations as in A
    ScenarioId.DISCRETE: ((4.5, 4.7, 2.9, 1.4), (7.5, 1.7, 2.9, 1.4)),
}

_CORR = np.array([[1.0, 0.3, 0.2], [0.3, 1.0, 0.4], [0.2, 0.4, 1.0]])
_CHOL = np.linalg.cholesky(_CORR)

# quantile thresholds putting mass 0.25 / 0.5 / 0.25 on x1 = -1 / 0 / 1
_Q25 = statistics.NormalDist().inv_cdf(0.25)
_Q75 = -_Q25

_ZSTAR_NOISE_SD = 0.2


@dataclass(frozen=True, slots=True)
class Scenario:
    """Named outcome scenario plus the optional shared outcome noise.

    The base outcome surfaces carry no noise term; a positive
    outcome_noise_sd adds one shared Normal(0, sd^2) draw to both
    potential outcomes of a unit (sensitivity runs only).
    """

    id: ScenarioId
    outcome_noise_sd: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.id, ScenarioId):
            object.__setattr__(self, "id", ScenarioId(self.id))
        if not self.outcome_noise_sd >= 0.0:
            raise ValueError("outcome_noise_sd must be >= 0")


@dataclass(frozen=True, slots=True)
class CovariateVector:
    x1: float
    x2: float
    x3: float

    def __post_init__(self) -> None:
        if self.x1 not in (-1.0, 0.0, 1.0):
            raise ValueError(f"x1 must be one of -1, 0, 1, got {self.x1}")
        if not (abs(self.x2) <= 1.0 and abs(self.x3) <= 1.0):
            raise ValueError("x2 and x3 must lie in [-1, 1]")


@dataclass(frozen=True, slots=True)
class UnitRecord:
    x: CovariateVector
    y1: float
    y0: float
    zstar: float


def draw_unit_arrays(
    scenario: Scenario, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized fast path: n units as (x1, x2, x3, y1, y0, zstar) arrays.

    Draw order per call: n*3 correlated normals, n z*-noise normals,
    then (only when the scenario has outcome noise) n shared-noise
    normals. A fixed call pattern makes streams reproducible per seed.
    """
    g = rng.standard_normal((n, 3)) @ _CHOL.T
    x1 = np.where(g[:, 0] < _Q25, -1.0, np.where(g[:, 0] > _Q75, 1.0, 0.0))
    if scenario.id is ScenarioId.DISCRETE:
        x2 = np.zeros(n)
        x3 = np.zeros(n)
    else:
        x2 = np.clip(g[:, 1], -2.0, 2.0) / 2.0
        x3 = 2.0 * ndtr(g[:, 2]) - 1.0
    eps_z = _ZSTAR_NOISE_SD * rng.standard_normal(n)
    zstar = np.tanh(0.8 * x1 + 0.5 * x2 * x2 - 0.3 * x3 + 0.1 * x1 * x3) + eps_z

    (i1, s1, b2_1, b3_1), (i0, s0, b2_0, b3_0) = _ARM_COEFFS[scenario.id]
    y1 = i1 + s1 * x1 + b2_1 * x2 + b3_1 * x3
    y0 = i0 + s0 * x1 + b2_0 * x2 + b3_0 * x3
    if scenario.outcome_noise_sd > 0.0:
        eps = scenario.outcome_noise_sd * rng.standard_normal(n)
        y1 = y1 + eps
        y0 = y0 + eps
    return x1, x2, x3, y1, y0, zstar


def gen_unit(scenario: Scenario, rng: np.random.Generator) -> UnitRecord:
    """One unit from a seeded stream."""
    x1, x2, x3, y1, y0, zstar = draw_unit_arrays(scenario, 1, rng)
    return UnitRecord(
        x=CovariateVector(float(x1[0]), float(x2[0]), float(x3[0])),
        y1=float(y1[0]),
        y0=float(y0[0]),
        zstar=float(zstar[0]),
    )


def gen_units(scenario: Scenario, n: int, rng: np.random.Generator) -> list[UnitRecord]:
    """n units drawn in one block (same stream as one draw_unit_arrays call)."""
    x1, x2, x3, y1, y0, zstar = draw_unit_arrays(scenario, n, rng)
    return [
        UnitRecord(
            x=CovariateVector(float(x1[i]), float(x2[i]), float(x3[i])),
            y1=float(y1[i]),
            y0=float(y0[i]),
            zstar=float(zstar[i]),
        )
        for i in range(n)
    ]


def true_ate(scenario: Scenario) -> float:
    """Population mean of Y(1) - Y(0), exact from the scenario coefficients.

    All three covariates have mean zero (x1 by the 0.25/0.5/0.25
    construction, x2 and x3 by symmetry of their transforms), so only
    the intercept difference survives.
    """
    if scenario.id not in _ARM_COEFFS:
        raise ValueError(f"unsupported scenario {scenario.id!r}")
    (i1, *_), (i0, *_) = _ARM_COEFFS[scenario.id]
    return i1 - i0
