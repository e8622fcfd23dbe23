"""Update mechanisms for the allocation parameter.

Three ways to turn the estimate sequence into the parameter sequence:
direct reuse, reuse on an increasingly rare index set (default: the
perfect squares), and norm-clipped steps with budget c0 * n**(-exponent).
The rare-set density and the vanishing clip budget each force the
cumulative parameter movement to be o(n), which is the slow-variation
property the allocation theory needs; the clip budget additionally has
a divergent sum (exponent <= 1), so clipped updates can still travel
arbitrarily far over time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .policy import ModelCoefficients


class MechanismKind(str, Enum):
    DIRECT = "direct"
    IRU = "iru"
    CLIPPED = "clipped"


def perfect_squares(n: int) -> bool:
    """Membership test for the default rare-update index set {k*k}."""
    r = math.isqrt(n)
    return r * r == n


@dataclass(frozen=True, slots=True)
class UpdateMechanism:
    """Parameter-update rule: kind plus its schedule knobs.

    iru_schedule is a membership predicate over step counts; it must
    describe a set whose density in [1, n] vanishes (the default
    perfect squares have density <= n**-0.5). clip_exponent must stay
    in (0, 1] so the clip budgets sum to infinity.
    """

    kind: MechanismKind
    iru_schedule: Callable[[int], bool] = perfect_squares
    clip_c0: float = 1.0
    clip_exponent: float = 0.5

    def __post_init__(self) -> None:
        if not isinstance(self.kind, MechanismKind):
            object.__setattr__(self, "kind", MechanismKind(self.kind))
        if not self.clip_c0 > 0.0:
            raise ValueError("clip_c0 must be > 0")
        if not 0.0 < self.clip_exponent <= 1.0:
            raise ValueError("clip_exponent must lie in (0, 1]")

    @classmethod
    def direct(cls) -> "UpdateMechanism":
        return cls(kind=MechanismKind.DIRECT)

    @classmethod
    def iru(cls, schedule: Callable[[int], bool] = perfect_squares) -> "UpdateMechanism":
        return cls(kind=MechanismKind.IRU, iru_schedule=schedule)

    @classmethod
    def clipped(cls, c0: float = 1.0, exponent: float = 0.5) -> "UpdateMechanism":
        return cls(kind=MechanismKind.CLIPPED, clip_c0=c0, clip_exponent=exponent)


def clip_bound(mech: UpdateMechanism, n: int) -> float:
    """Movement budget c0 * n**(-exponent) at step count n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return mech.clip_c0 * n ** (-mech.clip_exponent)


def next_theta(
    mech: UpdateMechanism,
    n: int,
    theta_prev: ModelCoefficients,
    eta_n: ModelCoefficients,
) -> ModelCoefficients:
    """Advance the allocation parameter given the fresh estimate eta_n.

    n counts responses available at this update (n >= 1). Direct
    returns eta_n. The rare mechanism returns eta_n only when the
    schedule contains n and otherwise holds theta_prev. Clipped moves
    from theta_prev toward eta_n, truncating the step to norm
    clip_bound(mech, n); a within-budget step lands on eta_n exactly,
    so the parameter never overshoots the estimate.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    kind = mech.kind
    if kind is MechanismKind.DIRECT:
        return eta_n
    if kind is MechanismKind.IRU:
        return eta_n if mech.iru_schedule(n) else theta_prev

    prev = theta_prev.as_array()
    delta = eta_n.as_array() - prev
    dist = float(np.linalg.norm(delta))
    bound = clip_bound(mech, n)
    if dist <= bound:
        return eta_n
    return ModelCoefficients.from_array(prev + delta * (bound / dist))
