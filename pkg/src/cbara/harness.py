"""Replicated trials: seeding, parallel execution, metric aggregation.

Seed discipline. Replication k of a plan runs with
seed_k = split_seed(base_seed, k), where split_seed is the SplitMix64
finalizer applied to base_seed + (k + 1) * 0x9E3779B97F4A7C15 (all
arithmetic mod 2**64). The function is pure and documented here so
other tools can regenerate any replication's stream exactly.

Aggregation sums per-replication statistics with math.fsum, which is
exactly rounded and therefore independent of completion order; together
with index-ordered result collection this makes summaries bit-identical
across parallelism levels and reruns.
"""
from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

from .datagen import true_ate
from .engine import TrialConfig, TrialResult, run_trial

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def split_seed(base_seed: int, k: int) -> int:
    """Derive the seed for replication k from a plan's base seed."""
    x = (base_seed + (k + 1) * _GOLDEN) & _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


@dataclass(frozen=True, slots=True)
class ReplicationPlan:
    base_config: TrialConfig
    n_reps: int
    base_seed: int
    parallelism: int = 1

    def __post_init__(self) -> None:
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if not 0 <= self.base_seed < 2**64:
            raise ValueError("base_seed must fit in 64 bits")


class TrialStats(NamedTuple):
    """The per-trial numbers every aggregate is built from."""

    lambda_norm: float
    psi: float
    psi_abs: float
    mean_response: float
    target_sd: float
    ipw: float
    clip_excess: float
    theta_max_norm: float


@dataclass(frozen=True, slots=True)
class MetricsSummary:
    """Replication means with Monte Carlo standard errors.

    ipw_mse is the mean squared error against the scenario's true
    effect and equals ipw_bias**2 plus the population variance of the
    estimates by construction. SE fields are None when n_reps = 1.
    """

    n_reps: int
    mean_lambda_norm: float
    mean_psi_abs: float
    mean_response: float
    mean_target_sd: float
    ipw_bias: float
    ipw_mse: float
    mean_lambda_norm_se: Optional[float]
    mean_psi_abs_se: Optional[float]
    mean_response_se: Optional[float]
    mean_target_sd_se: Optional[float]
    ipw_bias_se: Optional[float]
    ipw_mse_se: Optional[float]


@dataclass(frozen=True, slots=True)
class LabeledSummary:
    """A summary tagged with the grid cell that produced it."""

    size: int
    model: str
    procedure: str
    estimation: str
    mechanism: str
    summary: MetricsSummary


def _stats_of(result: TrialResult) -> TrialStats:
    return TrialStats(
        lambda_norm=result.final_lambda_norm,
        psi=result.final_imbalance.psi,
        psi_abs=result.final_psi_abs,
        mean_response=result.mean_response,
        target_sd=result.target_ratio_sd,
        ipw=result.ipw_estimate,
        clip_excess=result.clip_step_excess,
        theta_max_norm=result.theta_max_norm,
    )


def _replicate(cfg: TrialConfig) -> TrialStats:
    try:
        return _stats_of(run_trial(cfg))
    except Exception as exc:
        raise RuntimeError(f"replication failed at seed {cfg.seed}: {exc}") from exc


def replication_configs(plan: ReplicationPlan) -> list[TrialConfig]:
    """The exact per-replication configs a plan executes (logs off)."""
    return [
        replace(plan.base_config, seed=split_seed(plan.base_seed, k), keep_log=False)
        for k in range(plan.n_reps)
    ]


def collect(plan: ReplicationPlan) -> list[TrialStats]:
    """Run every replication and return per-trial statistics in
    replication order. The parallel path distributes trials over a
    process pool; results are joined by index, so the output is
    identical at any parallelism level."""
    configs = replication_configs(plan)
    if plan.parallelism == 1 or plan.n_reps == 1:
        return [_replicate(cfg) for cfg in configs]
    chunk = max(1, plan.n_reps // (plan.parallelism * 4))
    with multiprocessing.Pool(processes=plan.parallelism) as pool:
        return pool.map(_replicate, configs, chunksize=chunk)


def _mean_se(values: Sequence[float]) -> tuple[float, Optional[float]]:
    r = len(values)
    mean = math.fsum(values) / r
    if r < 2:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (r - 1)
    return mean, math.sqrt(var / r)


def summarize(stats: Sequence[TrialStats], true_effect: float) -> MetricsSummary:
    """Aggregate per-trial statistics into the reported metrics."""
    if not stats:
        raise ValueError("no trial statistics to summarize")
    errors = [s.ipw - true_effect for s in stats]
    sq_errors = [e * e for e in errors]
    mean_ln, se_ln = _mean_se([s.lambda_norm for s in stats])
    mean_pa, se_pa = _mean_se([s.psi_abs for s in stats])
    mean_mr, se_mr = _mean_se([s.mean_response for s in stats])
    mean_ts, se_ts = _mean_se([s.target_sd for s in stats])
    bias, se_bias = _mean_se(errors)
    mse, se_mse = _mean_se(sq_errors)
    return MetricsSummary(
        n_reps=len(stats),
        mean_lambda_norm=mean_ln,
        mean_psi_abs=mean_pa,
        mean_response=mean_mr,
        mean_target_sd=mean_ts,
        ipw_bias=bias,
        ipw_mse=mse,
        mean_lambda_norm_se=se_ln,
        mean_psi_abs_se=se_pa,
        mean_response_se=se_mr,
        mean_target_sd_se=se_ts,
        ipw_bias_se=se_bias,
        ipw_mse_se=se_mse,
    )


def run_replications(plan: ReplicationPlan) -> MetricsSummary:
    """Execute a plan and aggregate its metrics.

    The MSE is taken against the scenario's true average treatment
    effect. Any trial failure aborts the whole plan with the failing
    replication's seed in the error message.
    """
    stats = collect(plan)
    return summarize(stats, true_ate(plan.base_config.scenario))


_FAMILY_LABELS = {"crd": "CRD", "logistic": "Logistic", "probit": "Probit"}


def label_for(plan: ReplicationPlan) -> tuple[int, str, str, str, str]:
    cfg = plan.base_config
    return (
        cfg.n_units,
        cfg.scenario.id.value,
        _FAMILY_LABELS[cfg.policy.family.value],
        cfg.weighting.value.capitalize(),
        cfg.allocation.value.capitalize(),
    )


def aggregate_grid(plans: Sequence[ReplicationPlan]) -> list[LabeledSummary]:
    """Run a sequence of plans and label each summary with its grid
    cell, preserving input order."""
    if not plans:
        raise ValueError("plans must be nonempty")
    out: list[LabeledSummary] = []
    for plan in plans:
        size, model, procedure, estimation, mechanism = label_for(plan)
        out.append(
            LabeledSummary(
                size=size,
                model=model,
                procedure=procedure,
                estimation=estimation,
                mechanism=mechanism,
                summary=run_replications(plan),
            )
        )
    return out
