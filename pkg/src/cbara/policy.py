"""Targeted allocation ratios, tuning constants, and the allocation rule.

The allocation probability nudges each assignment against the running
imbalance vector: g = rho - p * <phi, lambda> / (scale * norm-guard),
clamped to [g_floor, 1 - g_floor]. With the symmetric ratio clamp the
pre-clamp value already lies in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datagen import CovariateVector

_EXP_ARG_MAX = 40.0  # monotone links saturate far before this
_SQRT2 = math.sqrt(2.0)


class Family(str, Enum):
    CRD = "crd"
    LOGISTIC = "logistic"
    PROBIT = "probit"


@dataclass(frozen=True, slots=True)
class ModelCoefficients:
    """Six-coefficient linear working model; doubles as the allocation parameter."""

    alpha1: float = 0.0
    gamma1: float = 0.0
    alpha0: float = 0.0
    gamma0: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0

    def __post_init__(self) -> None:
        for name in ("alpha1", "gamma1", "alpha0", "gamma0", "beta2", "beta3"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.alpha1, self.gamma1, self.alpha0, self.gamma0, self.beta2, self.beta3]
        )

    @classmethod
    def from_array(cls, arr) -> "ModelCoefficients":
        a = [float(v) for v in arr]
        if len(a) != 6:
            raise ValueError("expected 6 coefficients")
        return cls(*a)


ZERO_COEFFS = ModelCoefficients()


@dataclass(frozen=True, slots=True)
class TargetPolicy:
    """Ratio family plus clamp bounds and allocation-rule constants.

    The clamp must be symmetric (clamp_lo + clamp_hi = 1); that is what
    keeps the pre-clamp allocation probability inside [0, 1].
    """

    family: Family
    clamp_lo: float = 0.2
    clamp_hi: float = 0.8
    c_lambda: float = 1.0
    g_floor: float = 0.01

    def __post_init__(self) -> None:
        if not isinstance(self.family, Family):
            object.__setattr__(self, "family", Family(self.family))
        if not (0.0 < self.clamp_lo <= 0.5 <= self.clamp_hi < 1.0):
            raise ValueError("need 0 < clamp_lo <= 0.5 <= clamp_hi < 1")
        if abs(self.clamp_lo + self.clamp_hi - 1.0) > 1e-12:
            raise ValueError("asymmetric clamp: clamp_lo + clamp_hi must equal 1")
        if not self.c_lambda > 0.0:
            raise ValueError("c_lambda must be > 0")
        if not (0.0 < self.g_floor < self.clamp_lo):
            raise ValueError("need 0 < g_floor < clamp_lo")


def feature_vector(x: CovariateVector) -> tuple[float, float, float, float]:
    """phi(x) = (1, x1, x2, x3)."""
    return (1.0, x.x1, x.x2, x.x3)


def _link(policy: TargetPolicy, delta: float) -> float:
    """Clamped link applied to a treatment-effect difference delta."""
    fam = policy.family
    if fam is Family.CRD:
        return 0.5
    if fam is Family.LOGISTIC:
        u = min(max(-delta / 2.0, -_EXP_ARG_MAX), _EXP_ARG_MAX)
        raw = 1.0 / (1.0 + math.exp(u))
    else:  # probit
        u = min(max(delta / 3.0, -_EXP_ARG_MAX), _EXP_ARG_MAX)
        raw = 0.5 * (1.0 + math.erf(u / _SQRT2))
    return min(max(raw, policy.clamp_lo), policy.clamp_hi)


def target_ratio_from_x1(policy: TargetPolicy, theta: ModelCoefficients, x1: float) -> float:
    """target_ratio for callers that track covariates as plain scalars."""
    delta = (theta.alpha1 - theta.alpha0) + x1 * (theta.gamma1 - theta.gamma0)
    return _link(policy, delta)


def target_ratio(policy: TargetPolicy, theta: ModelCoefficients, x: CovariateVector) -> float:
    """Targeted treatment probability for covariate x under parameter theta.

    Only the arm contrast matters: delta = (alpha1 - alpha0)
    + x1 * (gamma1 - gamma0); the shared x2/x3 terms cancel.
    """
    return target_ratio_from_x1(policy, theta, x.x1)


def derive_constants(
    policy: TargetPolicy, theta: ModelCoefficients
) -> tuple[float, float, float]:
    """(p_theta, c_theta, rho_max) for the allocation rule.

    rho_max is attained at x1 = sign-matched +-1, so the closed form
    link(|alpha1 - alpha0| + |gamma1 - gamma0|) is exact for the
    three-point x1 support; p_theta = 1 / rho_max and
    c_theta = 2 / (rho_max * (1 - rho_max)), 2 being the largest
    feature norm on the covariate support.
    """
    delta_max = abs(theta.alpha1 - theta.alpha0) + abs(theta.gamma1 - theta.gamma0)
    rho_max = _link(policy, delta_max)
    p_theta = 1.0 / rho_max
    c_theta = 2.0 / (rho_max * (1.0 - rho_max))
    return p_theta, c_theta, rho_max


def _allocation_prob_raw(
    rho: float,
    p_theta: float,
    c_theta: float,
    c_lambda: float,
    phi: tuple[float, float, float, float],
    lam: tuple[float, float, float, float],
) -> float:
    """Pre-clamp allocation probability; shared by the public op and the engine."""
    f0, f1, f2, f3 = phi
    l0, l1, l2, l3 = lam
    dot = f0 * l0 + f1 * l1 + f2 * l2 + f3 * l3
    phi_norm = math.sqrt(f0 * f0 + f1 * f1 + f2 * f2 + f3 * f3)
    lam_norm = math.sqrt(l0 * l0 + l1 * l1 + l2 * l2 + l3 * l3)
    denom = max(phi_norm / (rho * (1.0 - rho)), c_theta) * max(lam_norm, c_lambda)
    return rho - p_theta * dot / denom


def allocation_prob(
    policy: TargetPolicy,
    theta: ModelCoefficients,
    lam,
    x: CovariateVector,
) -> float:
    """Allocation probability g(lambda, x): the targeted ratio pushed
    against the current imbalance, clamped to [g_floor, 1 - g_floor]."""
    l0, l1, l2, l3 = (float(v) for v in lam)
    for v in (l0, l1, l2, l3):
        if not math.isfinite(v):
            raise ValueError("imbalance vector must be finite")
    rho = target_ratio(policy, theta, x)
    p_theta, c_theta, _ = derive_constants(policy, theta)
    raw = _allocation_prob_raw(
        rho, p_theta, c_theta, policy.c_lambda, feature_vector(x), (l0, l1, l2, l3)
    )
    return min(max(raw, policy.g_floor), 1.0 - policy.g_floor)


def imbalance_increment(rho: float, phi, t: int):
    """(t - rho) * phi / (rho * (1 - rho)).

    phi may be the length-4 feature vector (returns an ndarray) or a
    scalar additional covariate z (returns a float).
    """
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie strictly inside (0, 1)")
    if t not in (0, 1):
        raise ValueError("t must be 0 or 1")
    scale = (t - rho) / (rho * (1.0 - rho))
    if np.isscalar(phi):
        return scale * float(phi)
    return scale * np.asarray(phi, dtype=float)
