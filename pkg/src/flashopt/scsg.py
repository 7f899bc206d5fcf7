"""Stochastically controlled stochastic gradient (SCSG) epochs.

An epoch anchors at ``x0`` with a batch gradient ``g`` of size ``B``, draws
its length ``T ~ Geom(B / (B + b))`` (mean ``B / b``) and takes ``T``
variance-reduced steps

    x_t = x_{t-1} - eta * (grad f_I(x_{t-1}) - grad f_I(x0) + g)

with fresh size-``b`` index sets ``I`` sampled with replacement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .oracle import (
    ConfigurationError,
    ContractViolation,
    Counters,
    FiniteSumProblem,
    full_gradient,
    subsampled_gradient,
)

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 1.0 / 6.0
CAP_FACTOR = 50
Z_99 = 2.58


def geometric_sample(p: float, rng: np.random.Generator) -> int:
    """Draw ``k`` with ``P(k) = p**k (1 - p)`` by inverting the CDF of one uniform."""
    if not 0.0 <= p < 1.0:
        raise ContractViolation(f"geometric parameter must lie in [0, 1), got {p}")
    if p == 0.0:
        return 0
    u = 1.0 - rng.random()  # in (0, 1]
    return int(math.floor(math.log(u) / math.log(p)))


@dataclass(frozen=True)
class ScsgConfig:
    B: int
    b: int = 1
    eta: float = 0.0
    K: int = 1

    def __post_init__(self):
        if not 1 <= self.b <= self.B:
            raise ConfigurationError(f"need 1 <= b <= B, got b={self.b}, B={self.B}")
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be positive, got {self.eta}")
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")

    @classmethod
    def from_constants(cls, L1: float, B: int, b: int = 1, K: int = 1, gamma: float = DEFAULT_GAMMA):
        """Step size from ``eta * L1 = gamma * (B / b) ** (-2/3)``."""
        return cls(B=int(B), b=int(b), eta=gamma * (b / B) ** (2.0 / 3.0) / L1, K=int(K))

    def gamma(self, L1: float) -> float:
        return self.eta * L1 * (self.B / self.b) ** (2.0 / 3.0)

    @property
    def p(self) -> float:
        return self.B / (self.B + self.b)

    @property
    def cap(self) -> int:
        return int(CAP_FACTOR * self.B / self.b)


@dataclass
class EpochOutput:
    x_out: np.ndarray
    T: int
    tg: int
    capped: bool = False
    anchor: Optional[np.ndarray] = None


def _anchor_gradient(problem, x0, B, rng, counters):
    if isinstance(problem, FiniteSumProblem) and B >= problem.n:
        return full_gradient(problem, x0, counters)
    return subsampled_gradient(problem, x0, B, rng, counters)


def vr_gradient(grad_y, offsets, curvatures, y, anchor_grads, g):
    """Variance-reduced direction ``grad f_I(y) - grad f_I(x0) + g``.

    ``grad_y`` is the shared-part gradient at ``y``; ``offsets``/``curvatures``
    describe component(s) ``I`` and ``anchor_grads`` their gradients at
    ``x0``.  Broadcasts over a leading component axis.
    """
    nu = grad_y + offsets - anchor_grads + g
    if curvatures is not None:
        nu = nu + curvatures * y
    return nu


def epoch_length(config: ScsgConfig, rng: np.random.Generator) -> tuple[int, bool]:
    T = geometric_sample(config.p, rng)
    if T > config.cap:
        logger.warning("epoch length %d capped at %d", T, config.cap)
        return config.cap, True
    return T, False


def scsg_epoch(problem, x0, config: ScsgConfig, anchor_grad=None, rng: Optional[np.random.Generator] = None,
               counters: Optional[Counters] = None, T: Optional[int] = None) -> EpochOutput:
    """Run one SCSG epoch from ``x0``.

    ``anchor_grad`` is the batch gradient at ``x0`` when the caller has
    already measured it (its cost is then not charged here).  ``T`` may be
    fixed by the caller; otherwise it is drawn from the geometric law.
    The ``tg`` field of the result counts only gradient units spent inside
    this call: ``B`` for an internally computed anchor plus ``2 b T``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    x0 = problem.check_point(x0)
    local = Counters()
    if anchor_grad is None:
        g = _anchor_gradient(problem, x0, config.B, rng, local)
    else:
        g = np.asarray(anchor_grad, dtype=float)
    capped = False
    if T is None:
        T, capped = epoch_length(config, rng)

    y = x0.copy()
    if T > 0:
        batch = problem.draw(rng, T * config.b)
        if config.b > 1:
            batch = batch.grouped_means(config.b)
        at_anchor = problem.component_grads(batch, x0)
        offsets, curv = batch.offsets, batch.curvatures
        grad = problem.objective.grad
        eta = config.eta
        for t in range(T):
            nu = vr_gradient(grad(y), offsets[t], None if curv is None else curv[t], y, at_anchor[t], g)
            y = y - eta * nu
        local.tg += 2 * config.b * T

    if counters is not None:
        counters.tg += local.tg
        counters.epochs += 1
    return EpochOutput(y, T, local.tg, capped, g)


@dataclass
class ScsgRun:
    iterates: list
    output: np.ndarray
    epochs: list = field(default_factory=list)


def scsg_run(problem, x0, config: ScsgConfig, rng: Optional[np.random.Generator] = None,
             counters: Optional[Counters] = None) -> ScsgRun:
    """Chain ``K`` epochs and return one epoch output drawn uniformly."""
    rng = rng if rng is not None else np.random.default_rng()
    x = problem.check_point(x0)
    epochs = []
    for _ in range(config.K):
        ep = scsg_epoch(problem, x, config, None, rng, counters)
        epochs.append(ep)
        x = ep.x_out
    iterates = [ep.x_out for ep in epochs]
    pick = int(rng.integers(0, len(iterates)))
    return ScsgRun(iterates, iterates[pick], epochs)


@dataclass
class ProgressReport:
    n_samples: int
    mean_grad_sq: float
    mean_decrease: float
    coefficient: float
    additive: float
    rhs: float
    stderr: float
    slack: float
    asserted: bool
    passed: Optional[bool]
    reason: str = ""


def epoch_progress_check(samples: Sequence[tuple], config: ScsgConfig, constants, n=math.inf,
                         variance: Optional[float] = None, min_samples: int = 30) -> ProgressReport:
    """Check the one-epoch bound ``E||grad f(x_out)||^2 <= c E[f(x0) - f(x_out)] + a``.

    ``c = (5 L1 / gamma) (b / B)^{1/3}`` (``30 L1 / B^{1/3}`` at the default
    ``gamma = 1/6, b = 1``) and ``a = 6 V / B`` when ``B < n``, zero
    otherwise, with ``V = 2 sigma^2`` unless ``variance`` is given.
    Each sample is ``(f(x0), f(x_out), ||grad f(x_out)||^2)``.  The bound is
    asserted on the paired differences with a 2.58 standard-error slack.
    """
    arr = np.asarray(samples, dtype=float).reshape(-1, 3)
    k = arr.shape[0]
    L1 = constants.L1
    gamma = config.gamma(L1)
    coef = 5.0 * L1 / gamma * (config.b / config.B) ** (1.0 / 3.0)
    V = 2.0 * constants.sigma**2 if variance is None else variance
    additive = 6.0 * V / config.B if config.B < n else 0.0
    dec = arr[:, 0] - arr[:, 1]
    gsq = arr[:, 2]
    mean_g = float(gsq.mean()) if k else math.nan
    mean_dec = float(dec.mean()) if k else math.nan
    rhs = coef * mean_dec + additive

    reason = ""
    if k < min_samples:
        reason = f"only {k} samples; need {min_samples}"
    elif config.B < 9:
        reason = f"B={config.B} < 9"
    elif gamma > DEFAULT_GAMMA * (1 + 1e-12):
        reason = f"gamma={gamma:.4g} exceeds 1/6"
    if reason:
        return ProgressReport(k, mean_g, mean_dec, coef, additive, rhs, math.nan, math.nan, False, None, reason)

    diff = gsq - coef * dec
    se = float(diff.std(ddof=1) / math.sqrt(k))
    passed = float(diff.mean()) <= additive + Z_99 * se
    return ProgressReport(k, mean_g, mean_dec, coef, additive, rhs, se, Z_99 * se, True, passed)
