"""Negative-curvature descent steps.

:func:`ncd3_step` moves a distance ``sqrt(3 eps_H / L3)`` along the found
direction with a Rademacher sign.  The third-order terms of the Taylor
expansion cancel in expectation over the sign, which is what licenses the
long step.  :func:`ncd2_baseline_step` is the classical ``eps_H / L2`` step
that keeps the better of the two candidates; it exists for comparison.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .negcurve import BOT, Direction, NCFinder, _Bot
from .oracle import ConfigurationError, ContractViolation, Counters, StochasticProblem

logger = logging.getLogger(__name__)

SIGN_RULES = ("rademacher", "argmin")
VARIANTS = ("ncd3", "ncd2")


@dataclass(frozen=True)
class Moved:
    y: np.ndarray
    sign: int
    direction: np.ndarray
    step_size: float
    f_before: float
    f_after: float
    rayleigh: float
    left_domain: bool = False


StepResult = Union[Moved, _Bot]


def ncd3_step_size(constants, targets) -> float:
    if not constants.L3 > 0:
        raise ContractViolation("L3 must be positive")
    return math.sqrt(3.0 * targets.eps_H / constants.L3)


def ncd2_step_size(constants, targets) -> float:
    if not constants.L2 > 0:
        raise ContractViolation("L2 must be positive")
    return targets.eps_H / constants.L2


def admissible_delta(constants, eps_H: float) -> float:
    """Largest failure probability for which the unconditional decrement holds."""
    return eps_H / (3.0 * eps_H + 8.0 * constants.L2)


def expected_decrement_bound(constants, targets) -> float:
    """Lower bound ``3 eps_H^2 / (8 L3)`` on the sign-averaged decrement."""
    if not constants.L3 > 0:
        raise ContractViolation("L3 must be positive")
    return 3.0 * targets.eps_H**2 / (8.0 * constants.L3)


def unconditional_decrement_bound(constants, targets) -> float:
    """``eps_H^2 / (8 L3)``, valid when ``delta <= eps_H / (3 eps_H + 8 L2)``."""
    limit = admissible_delta(constants, targets.eps_H)
    if targets.delta is not None and targets.delta > limit:
        logger.warning("delta=%.4g exceeds the admissible %.4g; the unconditional bound is not guaranteed",
                       targets.delta, limit)
    return targets.eps_H**2 / (8.0 * constants.L3)


def _diagnostic_value(problem, x) -> float:
    return float(problem.expected.value(x))


def _compare_values(problem, points, rng, value_batch: int) -> np.ndarray:
    """Objective values used to pick between candidates.

    Finite-sum problems use the exact average; stochastic problems use one
    shared sample batch so that the comparison is paired.
    """
    if isinstance(problem, StochasticProblem):
        batch = problem.draw(rng, value_batch)
        return np.array([problem.component_values(batch, p).mean() for p in points])
    return np.array([problem.value(p) for p in points])


def _check_step_inputs(x, targets):
    if not 0 < targets.eps_H < 1:
        raise ContractViolation(f"eps_H must lie in (0, 1), got {targets.eps_H}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ContractViolation("point has non-finite entries")
    return x


def _move(problem, x, direction: Direction, step, sign, f_before):
    y = x + sign * step * direction.v
    left = not problem.domain.contains(y)
    if left:
        logger.info("step of length %.4g leaves the certified domain", step)
    return Moved(y, sign, direction.v, step, f_before, _diagnostic_value(problem, y), direction.rayleigh, left)


def ncd3_step(problem, x, constants, targets, nc: NCFinder, rng: np.random.Generator,
              counters: Optional[Counters] = None, sign_rule: str = "rademacher",
              value_batch: int = 4096) -> StepResult:
    """One third-order negative-curvature descent step.

    Returns :data:`BOT` when the finder certifies no ``eps_H`` negative
    curvature at ``x``.  Otherwise returns ``x + zeta * eta * v`` with
    ``eta = sqrt(3 eps_H / L3)`` and ``zeta`` uniform on ``{-1, +1}``; the
    sign is not chosen by looking at ``f`` unless ``sign_rule="argmin"``.
    """
    if sign_rule not in SIGN_RULES:
        raise ConfigurationError(f"unknown sign rule {sign_rule!r}")
    x = _check_step_inputs(x, targets)
    eta = ncd3_step_size(constants, targets)
    outcome = nc(x, rng, counters)
    if outcome is BOT:
        return BOT
    f_before = _diagnostic_value(problem, x)
    if sign_rule == "rademacher":
        sign = 1 if rng.random() < 0.5 else -1
    else:
        vals = _compare_values(problem, [x + eta * outcome.v, x - eta * outcome.v], rng, value_batch)
        sign = 1 if vals[0] <= vals[1] else -1
    return _move(problem, x, outcome, eta, sign, f_before)


def ncd2_baseline_step(problem, x, constants, targets, nc: NCFinder, rng: np.random.Generator,
                       counters: Optional[Counters] = None, value_batch: int = 4096) -> StepResult:
    """Second-order baseline: the better of ``x +- (eps_H / L2) v``."""
    x = _check_step_inputs(x, targets)
    alpha = ncd2_step_size(constants, targets)
    outcome = nc(x, rng, counters)
    if outcome is BOT:
        return BOT
    f_before = _diagnostic_value(problem, x)
    vals = _compare_values(problem, [x + alpha * outcome.v, x - alpha * outcome.v], rng, value_batch)
    sign = 1 if vals[0] <= vals[1] else -1
    return _move(problem, x, outcome, alpha, sign, f_before)


def descent_step(variant: str, problem, x, constants, targets, nc, rng, counters=None,
                 sign_rule: str = "rademacher") -> StepResult:
    if variant == "ncd3":
        return ncd3_step(problem, x, constants, targets, nc, rng, counters, sign_rule)
    if variant == "ncd2":
        return ncd2_baseline_step(problem, x, constants, targets, nc, rng, counters)
    raise ConfigurationError(f"unknown descent variant {variant!r}; expected one of {VARIANTS}")
