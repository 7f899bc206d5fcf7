"""Approximate negative-curvature finders.

Both finders honour the same two-branch contract at a query point ``x``:
either return a :class:`Direction` -- a unit ``v`` whose Rayleigh quotient is
at most ``-eps_H / 2`` -- or return :data:`BOT`, certifying (with probability
``1 - delta``) that ``lambda_min(hess f(x)) >= -eps_H``.

The finders work on the shifted operator ``M = L1 * I - H``, whose top
eigenvector is the bottom eigenvector of ``H`` whenever ``L1`` bounds the
spectral radius.  After the iteration budget the candidate's Rayleigh
quotient ``rho`` decides: ``rho <= -3 eps_H / 4`` gives a direction,
``rho >= -eps_H / 2`` gives BOT, and anything in between doubles the budget
(at most ``retries`` times) before raising :class:`Inconclusive`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .oracle import (
    ContractViolation,
    ConfigurationError,
    Counters,
    FiniteSumProblem,
    StochasticProblem,
    fd_radius,
    hvp,
    sampled_hvp,
)

logger = logging.getLogger(__name__)

METHODS = ("hvp-power", "gradient-only", "oja")
UNIT_TOL = 1e-10
SOUNDNESS_TOL = 1e-8


class Inconclusive(RuntimeError):
    """The Rayleigh estimate stayed in the gray zone after every retry."""

    def __init__(self, rho: float, eps_H: float, budget: int):
        super().__init__(
            f"rayleigh {rho:.6g} in gray zone (-{0.75 * eps_H:.6g}, -{0.5 * eps_H:.6g}) after budget {budget}"
        )
        self.rho = rho
        self.budget = budget


class _Bot:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOT"

    def __bool__(self):
        return False


BOT = _Bot()


@dataclass(frozen=True)
class Direction:
    v: np.ndarray
    rayleigh: float


NCOutcome = Union[Direction, _Bot]


@dataclass(frozen=True)
class NCConfig:
    method: str = "hvp-power"
    max_iters: Optional[int] = None  # overrides the budget formula when set
    retries: int = 2
    budget_constant: float = 8.0
    minibatch: int = 256  # oja / stochastic gradient-only: samples per iteration
    rayleigh_batch: int = 2048  # stochastic: samples for the final Rayleigh estimate
    oja_step: Optional[float] = None  # defaults to 1 / L1
    max_samples: int = 10**6

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown negcurve method {self.method!r}; expected one of {METHODS}")
        if self.max_iters is not None and self.max_iters < 1:
            raise ConfigurationError("negcurve.max_iters must be >= 1")
        if self.retries < 0:
            raise ConfigurationError("negcurve.retries must be >= 0")
        if self.minibatch < 1 or self.rayleigh_batch < 1:
            raise ConfigurationError("negcurve batch sizes must be >= 1")


def rayleigh_quotient(problem, x, v, counters: Optional[Counters] = None) -> float:
    """``v^T hess f(x) v`` from one Hessian-vector product; ``v`` must be unit."""
    v = np.asarray(v, dtype=float)
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ContractViolation(f"rayleigh_quotient needs a unit vector, got norm {np.linalg.norm(v)}")
    return float(v @ hvp(problem, x, v, counters))


def power_budget(L1: float, eps_H: float, dim: int, delta: float, C: float = 8.0) -> int:
    return int(math.ceil(C * math.sqrt(L1 / eps_H) * math.log(dim / delta)))


def oja_budget(L1: float, eps_H: float, dim: int, delta: float, C: float = 8.0, cap: int = 10**6) -> int:
    """Sampled-HVP budget for the streaming finder, capped at ``cap``."""
    return int(min(cap, math.ceil(C * (L1 / eps_H) ** 2 * math.log(dim / delta) ** 2)))


def _random_unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _check_targets(targets):
    if not 0 < targets.eps_H < 1:
        raise ContractViolation(f"eps_H must lie in (0, 1), got {targets.eps_H}")
    if targets.delta is None or not 0 < targets.delta < 1:
        raise ContractViolation(f"delta must lie in (0, 1), got {targets.delta}")


def _hessian_operator(problem, x, fallback: bool):
    """``v -> H v`` at a fixed, already validated ``x``; the caller charges the counters."""
    # One counted call validates x and the oracle before the uncounted loop.
    hvp(problem, x, np.zeros_like(x), None, fallback=fallback)
    if not fallback:
        return lambda v: problem.hvp(x, v)
    gx = problem.grad(x)

    def forward_difference(v):
        r = fd_radius(x, v)
        return (problem.grad(x + r * v) - gx) / r

    return forward_difference


def _charge_hvps(counters, calls: int, fallback: bool, per_call: int = 1):
    if counters is None:
        return
    counters.th += calls * per_call
    if fallback:
        counters.tg += 2 * calls * per_call


def _decide(rho: float, v, eps_H: float) -> Optional[NCOutcome]:
    if rho <= -0.75 * eps_H:
        out = Direction(v / np.linalg.norm(v), rho)
        # Every returned direction is re-checked against the contract.
        assert abs(np.linalg.norm(out.v) - 1.0) <= UNIT_TOL
        assert out.rayleigh <= -0.5 * eps_H + SOUNDNESS_TOL
        return out
    if rho >= -0.5 * eps_H:
        return BOT
    return None


def approx_nc_finite_sum(problem, x, constants, targets, config: Optional[NCConfig] = None,
                         rng: Optional[np.random.Generator] = None,
                         counters: Optional[Counters] = None) -> NCOutcome:
    """Negative-curvature search with exact (full) Hessian-vector products.

    Runs power iteration on ``L1 * I - H`` where ``H v`` is the analytic
    product (``hvp-power``) or a forward gradient difference
    (``gradient-only``).
    """
    config = config or NCConfig()
    _check_targets(targets)
    if config.method == "oja":
        raise ConfigurationError("oja is a streaming method; use approx_nc_stochastic")
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(x, dtype=float)
    L1, eps_H = constants.L1, targets.eps_H
    fallback = config.method == "gradient-only"
    budget = config.max_iters or power_budget(L1, eps_H, x.shape[0], targets.delta, config.budget_constant)
    if counters is not None:
        counters.nc_calls += 1

    apply_h = _hessian_operator(problem, x, fallback)
    v = _random_unit(rng, x.shape[0])
    done = 0
    for _attempt in range(config.retries + 1):
        start = done
        while done < budget:
            w = L1 * v - apply_h(v)
            nrm = np.linalg.norm(w)
            if nrm == 0.0:
                break
            v = w / nrm
            done += 1
        _charge_hvps(counters, done - start, fallback)
        rho = float(v @ hvp(problem, x, v, counters, fallback=fallback))
        outcome = _decide(rho, v, eps_H)
        if outcome is not None:
            return outcome
        logger.debug("gray-zone rayleigh %.6g at budget %d; doubling", rho, budget)
        budget *= 2
    raise Inconclusive(rho, eps_H, done)


def approx_nc_stochastic(problem, x, constants, targets, config: Optional[NCConfig] = None,
                         rng: Optional[np.random.Generator] = None,
                         counters: Optional[Counters] = None) -> NCOutcome:
    """Negative-curvature search from sampled component HVPs only.

    ``oja`` takes the streaming update ``v <- normalise(v + s (L1 v - H_S v))``
    with a fresh minibatch ``S`` each iteration and step ``s = 1 / L1``;
    ``gradient-only`` replaces ``H_S v`` by a sampled two-point gradient
    difference.  The final Rayleigh quotient is estimated on a separate
    batch of ``rayleigh_batch`` samples.
    """
    config = config or NCConfig(method="oja")
    _check_targets(targets)
    if config.method == "hvp-power":
        raise ConfigurationError("hvp-power needs exact HVPs; use oja or gradient-only")
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    L1, eps_H = constants.L1, targets.eps_H
    fallback = config.method == "gradient-only"
    m = config.minibatch
    if config.max_iters is not None:
        iters = config.max_iters
    else:
        samples = oja_budget(L1, eps_H, d, targets.delta, config.budget_constant, config.max_samples)
        iters = max(1, math.ceil(samples / m))
    step = config.oja_step if config.oja_step is not None else 1.0 / L1
    if counters is not None:
        counters.nc_calls += 1

    v = _random_unit(rng, d)
    done = 0
    for _attempt in range(config.retries + 1):
        if fallback:
            while done < iters:
                hv = sampled_hvp(problem, x, v, m, rng, counters, fallback=True)
                w = v + step * (L1 * v - hv)
                v = w / np.linalg.norm(w)
                done += 1
        else:
            v, done = _oja_sweep(problem, x, v, done, iters, m, step, L1, rng, counters)
        hv = sampled_hvp(problem, x, v, config.rayleigh_batch, rng, counters, fallback=fallback)
        rho = float(v @ hv)
        outcome = _decide(rho, v, eps_H)
        if outcome is not None:
            return outcome
        logger.debug("gray-zone rayleigh %.6g after %d iterations; doubling", rho, iters)
        iters *= 2
    raise Inconclusive(rho, eps_H, done)


OJA_CHUNK = 256


def _oja_sweep(problem, x, v, done, iters, m, step, L1, rng, counters):
    """Oja updates with exact sampled HVPs; minibatch noise is drawn a chunk at a time.

    Equivalent to ``sampled_hvp`` per iteration (same law, same charges) but
    with one generator call per ``OJA_CHUNK`` iterations.
    """
    problem.check_point(x)
    hess = problem.objective.hvp
    while done < iters:
        count = min(OJA_CHUNK, iters - done)
        curv = problem.draw_curvature_means(rng, m, count)
        for i in range(count):
            hv = hess(x, v)
            if curv is not None:
                hv = hv + curv[i] * v
            w = v + step * (L1 * v - hv)
            v = w / np.linalg.norm(w)
        done += count
        _charge_hvps(counters, count, False, m)
    return v, done


NCFinder = Callable[[np.ndarray, np.random.Generator, Optional[Counters]], NCOutcome]


def make_nc_finder(problem, constants, targets, config: Optional[NCConfig] = None) -> NCFinder:
    """Bind a finder to a problem; the result is called as ``find(x, rng, counters)``."""
    if isinstance(problem, StochasticProblem):
        config = config or NCConfig(method="oja")
        search = approx_nc_stochastic
    elif isinstance(problem, FiniteSumProblem) or hasattr(problem, "hvp"):
        config = config or NCConfig()
        search = approx_nc_finite_sum
    else:
        raise ConfigurationError(f"no negative-curvature finder for {type(problem).__name__}")

    def find(x, rng, counters=None):
        return search(problem, x, constants, targets, config, rng, counters)

    return find
