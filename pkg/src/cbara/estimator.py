"""Working-model fitting and the inverse-propensity-weighted ATE.

The working model is linear with per-arm intercept and x1 slope plus
shared x2/x3 terms. Fitting it by weighted least squares with weights
(1/2) / rho_used(t | x) maximizes the reference-ratio-weighted Gaussian
criterion exactly, so no iterative solver is involved.

Weights are pinned at allocation time (each row carries the targeted
ratio in force when its unit was assigned), which is what makes the
running cross-product accumulator exact: past rows never get
reweighted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .datagen import CovariateVector
from .policy import ModelCoefficients, ZERO_COEFFS

_RANK_RTOL = 1e-8

_ALL_COLS = (0, 1, 2, 3, 4, 5)


class Weighting(str, Enum):
    WEIGHTED = "weighted"
    UNWEIGHTED = "unweighted"


@dataclass(frozen=True, slots=True)
class TrialRow:
    """One observed unit: covariates, arm, response, and the targeted
    ratio in force when the unit was allocated."""

    x: CovariateVector
    t: int
    y: float
    rho_used: float

    def __post_init__(self) -> None:
        if self.t not in (0, 1):
            raise ValueError("t must be 0 or 1")
        if not 0.0 < self.rho_used < 1.0:
            raise ValueError("rho_used must lie strictly inside (0, 1)")


@dataclass(frozen=True, slots=True)
class FitResult:
    eta: ModelCoefficients
    rank_ok: bool
    n_used: int


def design_row(x: CovariateVector, t: int) -> tuple[float, ...]:
    """d(x, t) = (t, t*x1, 1-t, (1-t)*x1, x2, x3)."""
    tf = float(t)
    return (tf, tf * x.x1, 1.0 - tf, (1.0 - tf) * x.x1, x.x2, x.x3)


class FitAccumulator:
    """Running normal equations Sum(w d d^T) / Sum(w d y) for one trial.

    add() exploits that a design row has only four nonzero entries
    (its arm block plus the shared x2/x3 tail), so each update touches
    ten Gram cells. Single-writer: owned by one trial engine.

    active restricts the solve to the listed design columns; excluded
    coefficients are reported as 0. The default keeps all six.
    """

    __slots__ = ("weighting", "active", "_g", "_b", "n", "n_treated")

    def __init__(
        self,
        weighting: Weighting = Weighting.WEIGHTED,
        active: Sequence[int] = _ALL_COLS,
    ) -> None:
        self.weighting = Weighting(weighting)
        act = tuple(sorted(set(int(c) for c in active)))
        if not act or act[0] < 0 or act[-1] > 5:
            raise ValueError("active must name design columns in 0..5")
        if not {0, 1, 2, 3} <= set(act):
            raise ValueError("the per-arm columns 0..3 cannot be dropped")
        self.active = act
        self._g = [[0.0] * 6 for _ in range(6)]
        self._b = [0.0] * 6
        self.n = 0
        self.n_treated = 0

    @property
    def has_both_arms(self) -> bool:
        return 0 < self.n_treated < self.n

    def add(self, x1: float, x2: float, x3: float, t: int, y: float, rho_used: float) -> None:
        if t == 1:
            idx = (0, 1, 4, 5)
            w = 0.5 / rho_used if self.weighting is Weighting.WEIGHTED else 1.0
            self.n_treated += 1
        else:
            idx = (2, 3, 4, 5)
            w = 0.5 / (1.0 - rho_used) if self.weighting is Weighting.WEIGHTED else 1.0
        vals = (1.0, x1, x2, x3)
        g = self._g
        b = self._b
        for a in range(4):
            ia = idx[a]
            va = w * vals[a]
            b[ia] += va * y
            row = g[ia]
            for c in range(a, 4):
                row[idx[c]] += va * vals[c]
        self.n += 1

    def add_row(self, row: TrialRow) -> None:
        self.add(row.x.x1, row.x.x2, row.x.x3, row.t, row.y, row.rho_used)

    def fit(self, fallback: ModelCoefficients = ZERO_COEFFS) -> FitResult:
        """Solve the accumulated normal equations.

        Falls back to the supplied coefficients with rank_ok = false
        when the (active-column) normal matrix has a singular value
        below 1e-8 times its largest.
        """
        if self.n == 0:
            raise ValueError("no rows accumulated")
        upper = np.array(self._g)
        full = upper + upper.T - np.diag(np.diagonal(upper))
        act = self.active
        sub = full[np.ix_(act, act)]
        eigs = np.linalg.eigvalsh(sub)
        if eigs[-1] <= 0.0 or eigs[0] < _RANK_RTOL * eigs[-1]:
            return FitResult(eta=fallback, rank_ok=False, n_used=self.n)
        rhs = np.array(self._b)[list(act)]
        sol = np.linalg.solve(sub, rhs)
        eta = [0.0] * 6
        for pos, col in enumerate(act):
            eta[col] = float(sol[pos])
        return FitResult(eta=ModelCoefficients.from_array(eta), rank_ok=True, n_used=self.n)


def fit_working_model(
    rows: Sequence[TrialRow],
    weighting: Weighting = Weighting.WEIGHTED,
    fallback: ModelCoefficients = ZERO_COEFFS,
    active: Sequence[int] = _ALL_COLS,
) -> FitResult:
    """Weighted least-squares fit of the working model over rows."""
    if len(rows) == 0:
        raise ValueError("rows must be nonempty")
    acc = FitAccumulator(weighting=weighting, active=active)
    for row in rows:
        acc.add_row(row)
    return acc.fit(fallback=fallback)


def ipw_ate(rows: Iterable[TrialRow]) -> float:
    """(1/N) Sum of t*y/rho - (1-t)*y/(1-rho) over the trial log."""
    total = 0.0
    n = 0
    for row in rows:
        rho = row.rho_used
        if not 0.0 < rho < 1.0 or not math.isfinite(rho):
            raise ValueError("rho_used must lie strictly inside (0, 1)")
        if row.t == 1:
            total += row.y / rho
        else:
            total -= row.y / (1.0 - rho)
        n += 1
    if n == 0:
        raise ValueError("rows must be nonempty")
    return total / n
