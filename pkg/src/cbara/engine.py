"""Sequential trial engine: arrival, estimation, adaptation, allocation.

One call to run_trial plays out a whole trial. Each step draws a unit,
refits the working model on the responses available so far (post
burn-in, both arms seen, honoring the response delay), advances the
allocation parameter through the configured update mechanism, allocates
by the targeted ratio (optionally imbalance-corrected), and pushes the
feature and scalar imbalance increments.

The per-step bookkeeping is deliberately scalar: block-drawing units
and unpacking numpy arrays into plain floats keeps the inner loop fast
enough for replication counts in the thousands on one core.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .adapt import MechanismKind, UpdateMechanism, clip_bound, next_theta
from .datagen import CovariateVector, Scenario, ScenarioId, draw_unit_arrays
from .estimator import FitAccumulator, Weighting
from .policy import (
    ModelCoefficients,
    TargetPolicy,
    ZERO_COEFFS,
    _allocation_prob_raw,
    derive_constants,
    target_ratio_from_x1,
)

_BLOCK = 256

_DISCRETE_ACTIVE = (0, 1, 2, 3)
_FULL_ACTIVE = (0, 1, 2, 3, 4, 5)


class Allocation(str, Enum):
    DIRECT = "direct"
    BALANCE = "balance"


@dataclass(frozen=True, slots=True)
class TrialConfig:
    """Everything that determines one trial, including its rng seed.

    frozen_theta is an escape hatch for asymptotic checks: when set,
    the allocation parameter is pinned at that value for the whole
    trial, no fitting or burn-in takes place, and allocation follows
    the pinned targeted ratio from step one.

    keep_log trades the per-step record list for speed and memory;
    summary fields are unaffected.
    """

    n_units: int
    scenario: Scenario
    policy: TargetPolicy
    weighting: Weighting
    mechanism: UpdateMechanism
    allocation: Allocation
    burn_in: int = 20
    response_delay: int = 0
    seed: int = 0
    frozen_theta: Optional[ModelCoefficients] = None
    keep_log: bool = True

    def __post_init__(self) -> None:
        if not isinstance(self.allocation, Allocation):
            object.__setattr__(self, "allocation", Allocation(self.allocation))
        if not isinstance(self.weighting, Weighting):
            object.__setattr__(self, "weighting", Weighting(self.weighting))
        if self.burn_in < 2:
            raise ValueError("burn_in must be >= 2")
        if self.n_units <= self.burn_in:
            raise ValueError("n_units must exceed burn_in")
        if self.response_delay < 0:
            raise ValueError("response_delay must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True, slots=True)
class ImbalanceState:
    """Feature imbalance vector and the scalar imbalance, as of some step."""

    lam: tuple[float, float, float, float]
    psi: float

    @property
    def lam_norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.lam))


@dataclass(frozen=True, slots=True)
class StepRecord:
    n: int
    x: CovariateVector
    rho: float
    g: float
    t: int
    y_observed: float
    zstar: float
    lambda_after: tuple[float, float, float, float]
    psi_after: float
    theta_before: ModelCoefficients


@dataclass(frozen=True, slots=True)
class TrialResult:
    """Per-trial summaries plus (optionally) the full step log.

    All summary fields are recomputable from the log when it is kept;
    the theta_* and clip_* fields are diagnostics for the adaptation
    trajectory (max parameter norm, total parameter movement, total
    clip budget, and the largest per-update budget violation, which
    must be 0 up to rounding).
    """

    log: tuple[StepRecord, ...]
    final_imbalance: ImbalanceState
    final_lambda_norm: float
    final_psi_abs: float
    mean_response: float
    target_ratio_sd: float
    ipw_estimate: float
    theta_final: ModelCoefficients
    theta_max_norm: float
    theta_move_sum: float
    clip_bound_sum: float
    clip_step_excess: float
    n_fit_steps: int


def _coef_norm(c: ModelCoefficients) -> float:
    return math.sqrt(
        c.alpha1 * c.alpha1
        + c.gamma1 * c.gamma1
        + c.alpha0 * c.alpha0
        + c.gamma0 * c.gamma0
        + c.beta2 * c.beta2
        + c.beta3 * c.beta3
    )


def _coef_dist(a: ModelCoefficients, b: ModelCoefficients) -> float:
    d0 = a.alpha1 - b.alpha1
    d1 = a.gamma1 - b.gamma1
    d2 = a.alpha0 - b.alpha0
    d3 = a.gamma0 - b.gamma0
    d4 = a.beta2 - b.beta2
    d5 = a.beta3 - b.beta3
    return math.sqrt(d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3 + d4 * d4 + d5 * d5)


def run_trial(cfg: TrialConfig) -> TrialResult:
    """Play out one trial and return its log and summaries.

    Identical configs (seed included) give bit-identical results: the
    rng is consumed in a fixed pattern (unit blocks, then one uniform
    per allocation) regardless of the trajectory taken.
    """
    rng = np.random.default_rng(cfg.seed)
    pol = cfg.policy
    mech = cfg.mechanism
    scenario = cfg.scenario
    balance = cfg.allocation is Allocation.BALANCE
    clipped = mech.kind is MechanismKind.CLIPPED
    frozen = cfg.frozen_theta is not None
    keep_log = cfg.keep_log
    burn = cfg.burn_in
    delay = cfg.response_delay
    n_units = cfg.n_units
    g_floor = pol.g_floor
    g_ceil = 1.0 - g_floor
    c_lambda = pol.c_lambda

    theta = cfg.frozen_theta if frozen else ZERO_COEFFS
    p_theta, c_theta, _ = derive_constants(pol, theta)

    active = _DISCRETE_ACTIVE if scenario.id is ScenarioId.DISCRETE else _FULL_ACTIVE
    acc = FitAccumulator(weighting=cfg.weighting, active=active)
    pending: list[tuple[float, float, float, int, float, float]] = []
    released = 0

    l0 = l1 = l2 = l3 = 0.0
    psi = 0.0
    sum_y = 0.0
    sum_rho = 0.0
    sum_rho_sq = 0.0
    ipw_sum = 0.0
    theta_max_norm = _coef_norm(theta)
    theta_move_sum = 0.0
    clip_bound_sum = 0.0
    clip_step_excess = 0.0
    n_fit_steps = 0
    log: list[StepRecord] = []

    i = 0
    while i < n_units:
        bn = min(_BLOCK, n_units - i)
        ax1, ax2, ax3, ay1, ay0, az = draw_unit_arrays(scenario, bn, rng)
        lx1 = ax1.tolist()
        lx2 = ax2.tolist()
        lx3 = ax3.tolist()
        ly1 = ay1.tolist()
        ly0 = ay0.tolist()
        lz = az.tolist()
        us = rng.random(bn).tolist()

        for k in range(bn):
            x1 = lx1[k]
            x2 = lx2[k]
            x3 = lx3[k]

            if not frozen and i >= burn:
                # responses of units with index <= i - delay are in hand
                target = i - delay + 1
                if target > i:
                    target = i
                while released < target:
                    row = pending[released]
                    acc.add(row[0], row[1], row[2], row[3], row[4], row[5])
                    released += 1
                if acc.has_both_arms:
                    fit = acc.fit(fallback=theta)
                    n_fit_steps += 1
                    if fit.rank_ok:
                        new_theta = next_theta(mech, acc.n, theta, fit.eta)
                        move = _coef_dist(new_theta, theta)
                        if move > 0.0:
                            theta_move_sum += move
                            theta = new_theta
                            p_theta, c_theta, _ = derive_constants(pol, theta)
                            norm = _coef_norm(theta)
                            if norm > theta_max_norm:
                                theta_max_norm = norm
                        if clipped:
                            budget = clip_bound(mech, acc.n)
                            clip_bound_sum += budget
                            if move - budget > clip_step_excess:
                                clip_step_excess = move - budget

            if not frozen and i < burn:
                rho_used = 0.5
                g = 0.5
            else:
                rho_used = target_ratio_from_x1(pol, theta, x1)
                if balance:
                    raw = _allocation_prob_raw(
                        rho_used,
                        p_theta,
                        c_theta,
                        c_lambda,
                        (1.0, x1, x2, x3),
                        (l0, l1, l2, l3),
                    )
                    g = min(max(raw, g_floor), g_ceil)
                else:
                    g = rho_used

            t = 1 if us[k] < g else 0
            y = ly1[k] if t else ly0[k]
            z = lz[k]

            scale = (t - rho_used) / (rho_used * (1.0 - rho_used))
            l0 += scale
            l1 += scale * x1
            l2 += scale * x2
            l3 += scale * x3
            psi += scale * z

            sum_y += y
            sum_rho += rho_used
            sum_rho_sq += rho_used * rho_used
            if t:
                ipw_sum += y / rho_used
            else:
                ipw_sum -= y / (1.0 - rho_used)

            if not frozen:
                pending.append((x1, x2, x3, t, y, rho_used))
            if keep_log:
                log.append(
                    StepRecord(
                        n=i + 1,
                        x=CovariateVector(x1, x2, x3),
                        rho=rho_used,
                        g=g,
                        t=t,
                        y_observed=y,
                        zstar=z,
                        lambda_after=(l0, l1, l2, l3),
                        psi_after=psi,
                        theta_before=theta,
                    )
                )
            i += 1

    if clipped and theta_move_sum > clip_bound_sum + 1e-9:
        raise RuntimeError(
            "clipped updates exceeded their cumulative budget: "
            f"{theta_move_sum} > {clip_bound_sum}"
        )

    n = float(n_units)
    rho_var = sum_rho_sq / n - (sum_rho / n) ** 2
    final = ImbalanceState(lam=(l0, l1, l2, l3), psi=psi)
    return TrialResult(
        log=tuple(log),
        final_imbalance=final,
        final_lambda_norm=final.lam_norm,
        final_psi_abs=abs(psi),
        mean_response=sum_y / n,
        target_ratio_sd=math.sqrt(rho_var) if rho_var > 0.0 else 0.0,
        ipw_estimate=ipw_sum / n,
        theta_final=theta,
        theta_max_norm=theta_max_norm,
        theta_move_sum=theta_move_sum,
        clip_bound_sum=clip_bound_sum,
        clip_step_excess=clip_step_excess,
        n_fit_steps=n_fit_steps,
    )
