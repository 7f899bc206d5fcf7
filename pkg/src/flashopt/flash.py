"""FLASH drivers: alternate SCSG epochs with negative-curvature descent.

Each outer iteration measures an anchor gradient ``g_k`` and then runs
exactly one phase.  A large ``g_k`` triggers one SCSG epoch anchored at
``g_k``.  A small one triggers one negative-curvature step, and the run
stops at the current iterate when the finder certifies there is no
``eps_H`` negative curvature.

The finite-sum driver uses the full gradient with threshold ``eps``; the
stochastic driver uses a size-``B`` sample with threshold ``eps / 2``.
"""

from __future__ import annotations

import logging
import math
from collections import Counter as _Tally
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .descent import SIGN_RULES, VARIANTS, admissible_delta, descent_step
from .eigen import MAX_DIM, dense_eigensolve
from .negcurve import BOT, Inconclusive, NCConfig, make_nc_finder
from .oracle import (
    ConfigurationError,
    ContractViolation,
    Counters,
    FiniteSumProblem,
    StochasticProblem,
    full_gradient,
    subsampled_gradient,
)
from .rng import child_rng
from .scsg import ScsgConfig, scsg_epoch

logger = logging.getLogger(__name__)

PHASES = ("scsg-epoch", "ncd3", "ncd2", "terminate")
TERMINATIONS = ("bot-returned", "K-exhausted", "nc-inconclusive")
DRIVERS = ("finite-sum", "stochastic")
K_CAP = 10**7


@dataclass(frozen=True)
class Targets:
    eps: float
    eps_H: float
    delta: Optional[float] = None
    delta0: float = 0.01

    def __post_init__(self):
        for name in ("eps", "eps_H", "delta0"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ContractViolation(f"{name} must lie in (0, 1), got {value}")
        if self.delta is not None and not 0 < self.delta < 1:
            raise ContractViolation(f"delta must lie in (0, 1), got {self.delta}")

    def resolve(self, constants) -> "Targets":
        """Fill the default ``delta = min(0.05, eps_H / (3 eps_H + 8 L2))``."""
        if self.delta is not None:
            limit = admissible_delta(constants, self.eps_H)
            if self.delta > limit:
                logger.warning("delta=%.4g above the recommended %.4g", self.delta, limit)
            return self
        return replace(self, delta=min(0.05, admissible_delta(constants, self.eps_H)))


def concentration_batch_size(sigma: float, deviation: float, delta0: float) -> int:
    """Batch size making ``||grad_S f - grad f|| <= deviation`` with probability ``1 - delta0``.

    ``B = ceil(2 sigma^2 / deviation^2 * (1 + sqrt(log(1 / delta0)))^2)`` for
    sigma-sub-Gaussian gradients.

    Examples
    --------
    >>> concentration_batch_size(1.0, 0.25 / 4, 0.01)
    5068
    """
    if not deviation > 0 or not 0 < delta0 < 1:
        raise ContractViolation("need deviation > 0 and delta0 in (0, 1)")
    if sigma == 0:
        return 1
    return int(math.ceil(2.0 * sigma**2 / deviation**2 * (1.0 + math.sqrt(math.log(1.0 / delta0))) ** 2))


def stochastic_batch_size(constants, targets: Targets) -> int:
    return concentration_batch_size(constants.sigma, targets.eps / 4.0, targets.delta0)


def default_K(constants, targets: Targets, B: float) -> int:
    """Outer-iteration cap: twice the sum of the NC-step and large-gradient-epoch counts."""
    nc = math.ceil(16.0 * constants.L3 * constants.delta_f / targets.eps_H**2)
    ep = math.ceil(96.0 * 30.0 * constants.L1 * constants.delta_f / (B ** (1.0 / 3.0) * targets.eps**2))
    return int(min(K_CAP, nc + ep))


@dataclass(frozen=True)
class FlashConfig:
    descent: str = "ncd3"  # or "ncd2" for the second-order baseline
    sign_rule: str = "rademacher"
    nc: Optional[NCConfig] = None  # defaults per driver
    K: Optional[int] = None
    B: Optional[int] = None  # stochastic driver only; default from the concentration bound
    eta: Optional[float] = None  # overrides 1 / (6 L1 B^{2/3})
    project: bool = True

    def __post_init__(self):
        if self.descent not in VARIANTS:
            raise ConfigurationError(f"unknown descent variant {self.descent!r}")
        if self.sign_rule not in SIGN_RULES:
            raise ConfigurationError(f"unknown sign rule {self.sign_rule!r}")
        if self.K is not None and self.K < 1:
            raise ConfigurationError("flash.K must be >= 1")
        if self.B is not None and self.B < 1:
            raise ConfigurationError("B must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ConfigurationError("eta must be positive")


@dataclass(frozen=True)
class IterationLog:
    k: int
    phase: str
    grad_norm: float
    below_threshold: bool
    counters: dict  # snapshot after the phase
    anchor_tg: int = 0
    epoch_T: int = 0
    epoch_tg: int = 0
    nc_tg: int = 0
    nc_th: int = 0
    nc_outcome: str = ""  # "direction", "bot", "inconclusive" or ""
    step_sign: int = 0
    projected: bool = False


@dataclass(frozen=True)
class RunRecord:
    driver: str
    log: tuple
    x_final: np.ndarray
    termination: str
    counters: dict
    K: int
    threshold: float
    diagnostic: str = ""

    @property
    def phase_counts(self) -> dict:
        return dict(_Tally(entry.phase for entry in self.log))

    @property
    def tg_total(self) -> int:
        return self.counters["tg"]

    @property
    def th_total(self) -> int:
        return self.counters["th"]


def _nc_default(problem, config: FlashConfig) -> NCConfig:
    if config.nc is not None:
        return config.nc
    return NCConfig(method="oja") if isinstance(problem, StochasticProblem) else NCConfig()


def _run(driver, problem, x0, constants, targets, K, config, rng, anchor_size, threshold, scsg_config):
    targets = targets.resolve(constants)
    finder = make_nc_finder(problem, constants, targets, _nc_default(problem, config))
    # Separate sub-streams per role so paired runs share as much randomness as possible.
    rng_anchor, rng_epoch, rng_nc, rng_step = (child_rng(rng) for _ in range(4))

    def nc(point, _rng, ctr):
        # The finder keeps its own stream; the step stream only drives the sign.
        return finder(point, rng_nc, ctr)

    x = problem.check_point(x0).copy()
    counters = Counters()
    log = []
    termination, diagnostic = "K-exhausted", ""
    for k in range(1, K + 1):
        tg0 = counters.tg
        if driver == "finite-sum":
            g = full_gradient(problem, x, counters)
        else:
            g = subsampled_gradient(problem, x, anchor_size, rng_anchor, counters)
        anchor_tg = counters.tg - tg0
        gnorm = float(np.linalg.norm(g))
        below = gnorm <= threshold

        if not below:
            ep = scsg_epoch(problem, x, scsg_config, anchor_grad=g, rng=rng_epoch, counters=counters)
            y, projected = _maybe_project(problem, ep.x_out, config.project)
            x = y
            log.append(IterationLog(k, "scsg-epoch", gnorm, below, counters.snapshot(), anchor_tg,
                                    ep.T, ep.tg, projected=projected))
            continue

        tg1, th1 = counters.tg, counters.th
        try:
            step = descent_step(config.descent, problem, x, constants, targets, nc, rng_step, counters,
                                config.sign_rule)
        except Inconclusive as exc:
            log.append(IterationLog(k, "terminate", gnorm, below, counters.snapshot(), anchor_tg,
                                    nc_tg=counters.tg - tg1, nc_th=counters.th - th1,
                                    nc_outcome="inconclusive"))
            termination, diagnostic = "nc-inconclusive", str(exc)
            logger.warning("run aborted at k=%d: %s", k, exc)
            break
        nc_tg, nc_th = counters.tg - tg1, counters.th - th1
        if step is BOT:
            log.append(IterationLog(k, "terminate", gnorm, below, counters.snapshot(), anchor_tg,
                                    nc_tg=nc_tg, nc_th=nc_th, nc_outcome="bot"))
            termination = "bot-returned"
            break
        y, projected = _maybe_project(problem, step.y, config.project)
        x = y
        log.append(IterationLog(k, config.descent, gnorm, below, counters.snapshot(), anchor_tg,
                                nc_tg=nc_tg, nc_th=nc_th, nc_outcome="direction", step_sign=step.sign,
                                projected=projected))

    record = RunRecord(driver, tuple(log), x, termination, counters.snapshot(), K, threshold, diagnostic)
    audit = counter_audit(record, anchor_size)
    if not audit:
        raise AssertionError(f"counter audit failed: {audit}")
    return record


def _maybe_project(problem, y, project):
    if problem.domain.contains(y):
        return y, False
    if not project:
        logger.info("iterate left the certified domain")
        return y, False
    logger.info("iterate projected back onto the certified domain")
    return problem.domain.project(y), True


def _resolve_K(K, config, constants, targets, B):
    if K is not None:
        if int(K) < 1:
            raise ContractViolation(f"K must be >= 1, got {K}")
        return int(K)
    if config.K is not None:
        return config.K
    return default_K(constants, targets, B)


def flash_finite_sum(problem: FiniteSumProblem, x0, constants, targets: Targets, K: Optional[int] = None,
                     config: Optional[FlashConfig] = None,
                     rng: Optional[np.random.Generator] = None) -> RunRecord:
    """Finite-sum FLASH: full anchor gradient, threshold ``eps``, epochs with ``B = n``, ``b = 1``."""
    if not isinstance(problem, FiniteSumProblem):
        raise ContractViolation("flash_finite_sum needs a FiniteSumProblem")
    config = config or FlashConfig()
    rng = rng if rng is not None else np.random.default_rng()
    n = problem.n
    targets_r = targets.resolve(constants)
    K = _resolve_K(K, config, constants, targets_r, n)
    eta = config.eta if config.eta is not None else 1.0 / (6.0 * constants.L1 * n ** (2.0 / 3.0))
    scsg_config = ScsgConfig(B=n, b=1, eta=eta)
    return _run("finite-sum", problem, x0, constants, targets_r, K, config, rng, n, targets.eps, scsg_config)


def flash_stochastic(problem: StochasticProblem, x0, constants, targets: Targets, K: Optional[int] = None,
                     config: Optional[FlashConfig] = None,
                     rng: Optional[np.random.Generator] = None) -> RunRecord:
    """Stochastic FLASH: size-``B`` anchor gradient, threshold ``eps / 2``, ``b = 1`` epochs."""
    if not isinstance(problem, StochasticProblem):
        raise ContractViolation("flash_stochastic needs a StochasticProblem")
    config = config or FlashConfig()
    if config.B is None and not constants.sigma > 0:
        raise ContractViolation("sigma must be set to size the anchor batch")
    rng = rng if rng is not None else np.random.default_rng()
    targets_r = targets.resolve(constants)
    B = config.B if config.B is not None else stochastic_batch_size(constants, targets_r)
    K = _resolve_K(K, config, constants, targets_r, B)
    eta = config.eta if config.eta is not None else 1.0 / (6.0 * constants.L1 * B ** (2.0 / 3.0))
    scsg_config = ScsgConfig(B=B, b=1, eta=eta)
    return _run("stochastic", problem, x0, constants, targets_r, K, config, rng, B, targets.eps / 2.0,
                scsg_config)


# ---------------------------------------------------------------------------
# Audit and certification


@dataclass
class AuditResult:
    ok: bool
    tg_recomputed: int
    th_recomputed: int
    problems: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def counter_audit(record: RunRecord, anchor_size: int) -> AuditResult:
    """Recompute the run totals from the log and compare.

    Every iteration pays ``anchor_size`` for its anchor gradient, an epoch
    pays ``2 T`` and a descent phase pays whatever the finder consumed.
    Snapshots must be nondecreasing.
    """
    issues = []
    tg = th = 0
    prev = {"tg": 0, "th": 0, "nc_calls": 0, "epochs": 0}
    for entry in record.log:
        if entry.anchor_tg != anchor_size:
            issues.append(f"k={entry.k}: anchor cost {entry.anchor_tg} != {anchor_size}")
        if entry.phase == "scsg-epoch" and entry.epoch_tg != 2 * entry.epoch_T:
            issues.append(f"k={entry.k}: epoch cost {entry.epoch_tg} != 2*{entry.epoch_T}")
        tg += entry.anchor_tg + 2 * entry.epoch_T + entry.nc_tg
        th += entry.nc_th
        snap = entry.counters
        if any(snap[key] < prev[key] for key in prev):
            issues.append(f"k={entry.k}: counters decreased")
        if snap["tg"] != tg or snap["th"] != th:
            issues.append(f"k={entry.k}: snapshot {snap} does not match recomputed tg={tg}, th={th}")
        prev = snap
    if tg != record.counters["tg"] or th != record.counters["th"]:
        issues.append("final totals do not match the log")
    return AuditResult(not issues, tg, th, issues)


@dataclass(frozen=True)
class Certificate:
    point: np.ndarray
    grad_norm: float
    lambda_min: float
    pass_first_order: bool
    pass_second_order: bool

    @property
    def passed(self) -> bool:
        return self.pass_first_order and self.pass_second_order

    def to_dict(self) -> dict:
        return {
            "point": [float(v) for v in self.point],
            "grad_norm": self.grad_norm,
            "lambda_min": self.lambda_min,
            "pass_first_order": self.pass_first_order,
            "pass_second_order": self.pass_second_order,
            "pass": self.passed,
        }


def dense_hessian(objective, x) -> np.ndarray:
    """Hessian assembled from ``d`` products against the basis vectors, symmetrised."""
    d = x.shape[0]
    eye = np.eye(d)
    H = np.column_stack([objective.hvp(x, eye[:, j]) for j in range(d)])
    return 0.5 * (H + H.T)


def certify_sosp(problem, x, targets: Targets) -> Certificate:
    """Ground-truth (eps, eps_H) check on the exact expected objective."""
    target = problem.expected
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    if d > MAX_DIM:
        raise ContractViolation(f"dense certification is limited to d <= {MAX_DIM}, got {d}")
    if not target.has_hvp:
        raise ContractViolation("certification needs an exact Hessian-vector oracle")
    g = target.grad(x)
    lam = dense_eigensolve(dense_hessian(target, x)).lambda_min
    gnorm = float(np.linalg.norm(g))
    return Certificate(x.copy(), gnorm, lam, gnorm <= targets.eps, lam >= -targets.eps_H)
