"""Objective oracles for finite-sum and streaming-stochastic problems.

All problems here share one component model.  A component is indexed by a
noise pair ``(o, c)`` and evaluates

    F(x; o, c) = f(x) + <o, x> + 1/2 * sum_j c_j x_j**2

on top of a deterministic base objective ``f``.  A :class:`FiniteSumProblem`
stores ``n`` mean-centred pairs, so the average of its components is ``f``
exactly; a :class:`StochasticProblem` draws zero-mean pairs on demand, so
``f`` is the expected objective.

Nothing in this module mutates shared state.  Evaluation counters and random
generators are passed in explicitly by the caller.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]


class ContractViolation(ValueError):
    """An operation was called outside its precondition."""


class ConfigurationError(ValueError):
    """An unknown name or an invalid parameter combination."""


@dataclass
class Counters:
    """Per-run evaluation counters.

    ``tg`` counts stochastic-gradient units and ``th`` counts Hessian-vector
    product units.
    """

    tg: int = 0
    th: int = 0
    nc_calls: int = 0
    epochs: int = 0

    def snapshot(self) -> dict:
        return {"tg": self.tg, "th": self.th, "nc_calls": self.nc_calls, "epochs": self.epochs}


@dataclass(frozen=True)
class SmoothnessConstants:
    L1: float
    L2: float
    L3: float
    sigma: float = 0.0
    delta_f: float = 1.0
    variance_bound: Optional[float] = None

    def __post_init__(self):
        for name in ("L1", "L2", "L3"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be a positive finite number, got {value}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be nonnegative, got {self.sigma}")
        if not self.delta_f > 0:
            raise ConfigurationError(f"delta_f must be positive, got {self.delta_f}")
        if self.variance_bound is not None:
            if self.variance_bound < 0:
                raise ConfigurationError("variance_bound must be nonnegative")
            if self.sigma > 0 and self.variance_bound > 2 * self.sigma**2 * (1 + 1e-12):
                raise ConfigurationError(
                    f"variance_bound {self.variance_bound} exceeds 2*sigma^2 = {2 * self.sigma**2}"
                )

    @property
    def variance(self) -> float:
        """Variance bound, defaulting to the sub-Gaussian ceiling 2*sigma^2."""
        if self.variance_bound is not None:
            return self.variance_bound
        return 2.0 * self.sigma**2


@dataclass(frozen=True)
class Domain:
    """Region on which a problem's declared constants are certified."""

    kind: str  # "box" (sup-norm ball) or "ball" (Euclidean ball)
    radius: float

    def contains(self, x: Vector) -> bool:
        if self.kind == "box":
            return bool(np.max(np.abs(x)) <= self.radius)
        return bool(np.linalg.norm(x) <= self.radius)

    def project(self, x: Vector) -> Vector:
        if self.kind == "box":
            return np.clip(x, -self.radius, self.radius)
        norm = np.linalg.norm(x)
        if norm <= self.radius:
            return x
        return x * (self.radius / norm)

    def max_norm(self, dim: int) -> float:
        """Largest Euclidean norm of a point in the domain."""
        if self.kind == "box":
            return self.radius * math.sqrt(dim)
        return self.radius

    def sample(self, rng: np.random.Generator, dim: int, size: Optional[int] = None) -> Vector:
        shape = (dim,) if size is None else (size, dim)
        if self.kind == "box":
            return rng.uniform(-self.radius, self.radius, size=shape)
        g = rng.standard_normal(size=shape)
        g /= np.linalg.norm(g, axis=-1, keepdims=True)
        r = self.radius * rng.random(size=shape[:-1] + (1,)) ** (1.0 / dim)
        out = g * r
        return out if size is not None else out.reshape(dim)


# ---------------------------------------------------------------------------
# Base objectives


class Objective:
    """Deterministic smooth objective ``f: R^d -> R``.

    Subclasses provide ``value`` and ``grad``; ``hvp``, ``hessian`` and the
    third-order helpers are optional.  ``f_lower`` is a certified lower bound
    on ``inf f`` (``-inf`` when unknown).
    """

    dim: int
    f_lower: float = -math.inf

    def value(self, x: Vector) -> float:
        raise NotImplementedError

    def grad(self, x: Vector) -> Vector:
        raise NotImplementedError

    def hvp(self, x: Vector, v: Vector) -> Vector:
        raise NotImplementedError

    def hessian(self, x: Vector) -> NDArray:
        return np.column_stack([self.hvp(x, e) for e in np.eye(self.dim)])

    def third_directional(self, x: Vector, w: Vector) -> float:
        """<grad^3 f(x), w (x) w (x) w>."""
        raise NotImplementedError

    def third_tensor(self, x: Vector) -> NDArray:
        raise NotImplementedError

    @property
    def has_hvp(self) -> bool:
        return type(self).hvp is not Objective.hvp


class Quadratic(Objective):
    """``f(x) = 1/2 x^T A x - <b, x>``."""

    def __init__(self, A, b=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError("A must be square")
        self.A = 0.5 * (A + A.T)
        self.dim = A.shape[0]
        self.b = np.zeros(self.dim) if b is None else np.asarray(b, dtype=float)
        eig = np.linalg.eigvalsh(self.A)
        self.f_lower = -0.5 * float(self.b @ np.linalg.solve(self.A, self.b)) if eig[0] > 0 else -math.inf

    def value(self, x):
        return 0.5 * float(x @ self.A @ x) - float(self.b @ x)

    def grad(self, x):
        return self.A @ x - self.b

    def hvp(self, x, v):
        return self.A @ v

    def hessian(self, x):
        return self.A.copy()

    def third_directional(self, x, w):
        return 0.0

    def third_tensor(self, x):
        return np.zeros((self.dim,) * 3)


class SeparableQuartic(Objective):
    """``f(x) = sum_j (x_j^4/4 - x_j^2/2)``: saddle at 0, minima at ``{+-1}^d``."""

    def __init__(self, dim: int):
        self.dim = dim
        self.f_lower = -dim / 4.0

    def value(self, x):
        x2 = x * x
        return float(np.sum(0.25 * x2 * x2 - 0.5 * x2))

    def grad(self, x):
        return x * x * x - x

    def hvp(self, x, v):
        return (3.0 * x * x - 1.0) * v

    def hessian(self, x):
        return np.diag(3.0 * x * x - 1.0)

    def third_directional(self, x, w):
        return float(np.sum(6.0 * x * w**3))

    def third_tensor(self, x):
        T = np.zeros((self.dim,) * 3)
        idx = np.arange(self.dim)
        T[idx, idx, idx] = 6.0 * x
        return T


class QuarticSaddle(Objective):
    """``f(x) = 1/2 x^T A x + (mu/6) (u^T x)^3 + (kappa/4) ||x||^4``.

    With ``mu = 0`` this is the coupled saddle; with ``mu > 0`` the cubic term
    along the planted direction ``u`` makes ``f`` asymmetric about the saddle.
    """

    def __init__(self, A, kappa: float = 1.0, u=None, mu: float = 0.0):
        A = np.asarray(A, dtype=float)
        self.A = 0.5 * (A + A.T)
        self.dim = A.shape[0]
        self.kappa = float(kappa)
        self.mu = float(mu)
        self.u = np.zeros(self.dim) if u is None else np.asarray(u, dtype=float)
        if self.mu != 0.0 and not math.isclose(np.linalg.norm(self.u), 1.0, rel_tol=1e-12):
            raise ConfigurationError("u must be a unit vector when mu != 0")
        self.f_lower = self._lower_bound()

    def _lower_bound(self) -> float:
        # On ||x|| = r: f >= lam r^2/2 - mu r^3/6 + kappa r^4/4; minimise over r >= 0.
        lam = float(np.linalg.eigvalsh(self.A)[0])
        k, m = self.kappa, abs(self.mu)
        radial = np.polynomial.Polynomial([0.0, 0.0, lam / 2, -m / 6, k / 4])
        crit = [r.real for r in radial.deriv().roots() if abs(r.imag) < 1e-12 and r.real >= 0]
        return float(min(radial(r) for r in crit + [0.0]))

    def value(self, x):
        s = float(self.u @ x)
        r2 = float(x @ x)
        return 0.5 * float(x @ self.A @ x) + self.mu * s**3 / 6.0 + 0.25 * self.kappa * r2 * r2

    def grad(self, x):
        s = float(self.u @ x)
        return self.A @ x + 0.5 * self.mu * s * s * self.u + self.kappa * float(x @ x) * x

    def hvp(self, x, v):
        s = float(self.u @ x)
        return (
            self.A @ v
            + self.mu * s * float(self.u @ v) * self.u
            + self.kappa * (float(x @ x) * v + 2.0 * float(x @ v) * x)
        )

    def hessian(self, x):
        s = float(self.u @ x)
        return (
            self.A
            + self.mu * s * np.outer(self.u, self.u)
            + self.kappa * (float(x @ x) * np.eye(self.dim) + 2.0 * np.outer(x, x))
        )

    def third_directional(self, x, w):
        return 6.0 * self.kappa * float(w @ w) * float(x @ w) + self.mu * float(self.u @ w) ** 3

    def third_tensor(self, x):
        eye = np.eye(self.dim)
        T = 2.0 * self.kappa * (
            np.einsum("i,jk->ijk", x, eye) + np.einsum("j,ik->ijk", x, eye) + np.einsum("k,ij->ijk", x, eye)
        )
        return T + self.mu * np.einsum("i,j,k->ijk", self.u, self.u, self.u)


# ---------------------------------------------------------------------------
# Component model


class Batch(NamedTuple):
    """A set of sampled components: linear offsets and diagonal curvatures, shape (m, d)."""

    offsets: NDArray
    curvatures: Optional[NDArray] = None

    def __len__(self):
        return self.offsets.shape[0]

    def grouped_means(self, size: int) -> "Batch":
        """Average consecutive groups of ``size`` rows (a minibatch per row)."""
        m, d = self.offsets.shape
        if m % size:
            raise ContractViolation(f"batch of {m} does not split into groups of {size}")
        off = self.offsets.reshape(m // size, size, d).mean(axis=1)
        curv = None if self.curvatures is None else self.curvatures.reshape(m // size, size, d).mean(axis=1)
        return Batch(off, curv)


class _ComponentProblem:
    objective: Objective
    constants: SmoothnessConstants
    domain: Domain
    name: str

    @property
    def dim(self) -> int:
        return self.objective.dim

    def check_point(self, x) -> Vector:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ContractViolation(f"expected a point of shape ({self.dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ContractViolation("point has non-finite entries")
        return x

    def draw(self, rng: np.random.Generator, size: int) -> Batch:
        raise NotImplementedError

    def draw_curvature_mean(self, rng: np.random.Generator, size: int) -> Optional[Vector]:
        """Mean diagonal curvature of ``size`` sampled components, or None when there is none.

        Only a sampled HVP needs this, so the offsets are never drawn.
        """
        raise NotImplementedError

    def draw_curvature_means(self, rng: np.random.Generator, size: int, count: int) -> Optional[NDArray]:
        """``count`` independent minibatch means, shape ``(count, d)``, or None."""
        raise NotImplementedError

    def component_values(self, batch: Batch, x: Vector) -> NDArray:
        lin = batch.offsets @ x
        if batch.curvatures is not None:
            lin = lin + 0.5 * (batch.curvatures @ (x * x))
        return self.objective.value(x) + lin

    def component_grads(self, batch: Batch, x: Vector) -> NDArray:
        g = self.objective.grad(x) + batch.offsets
        if batch.curvatures is not None:
            g = g + batch.curvatures * x
        return g

    def component_hvps(self, batch: Batch, x: Vector, v: Vector) -> NDArray:
        hv = np.broadcast_to(self.objective.hvp(x, v), batch.offsets.shape).copy()
        if batch.curvatures is not None:
            hv += batch.curvatures * v
        return hv

    def batch_grad(self, batch: Batch, x: Vector) -> Vector:
        """Mean gradient of the components in ``batch`` (uncounted)."""
        g = self.objective.grad(x) + batch.offsets.mean(axis=0)
        if batch.curvatures is not None:
            g = g + batch.curvatures.mean(axis=0) * x
        return g

    def batch_hvp(self, batch: Batch, x: Vector, v: Vector) -> Vector:
        hv = self.objective.hvp(x, v)
        if batch.curvatures is not None:
            hv = hv + batch.curvatures.mean(axis=0) * v
        return hv


class FiniteSumProblem(_ComponentProblem):
    """``f(x) = 1/n sum_i f_i(x)`` with explicitly stored components."""

    def __init__(self, objective: Objective, offsets, curvatures=None, constants=None,
                 domain: Optional[Domain] = None, name: str = "finite-sum"):
        self.objective = objective
        self.offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
        self.curvatures = None if curvatures is None else np.atleast_2d(np.asarray(curvatures, dtype=float))
        if self.offsets.shape[1] != objective.dim:
            raise ConfigurationError("offsets must have one column per dimension")
        if self.curvatures is not None and self.curvatures.shape != self.offsets.shape:
            raise ConfigurationError("curvatures must match offsets in shape")
        self.n = self.offsets.shape[0]
        self._mean_offset = self.offsets.mean(axis=0)
        self._mean_curv = None if self.curvatures is None else self.curvatures.mean(axis=0)
        self.constants = constants
        self.domain = domain or Domain("ball", math.inf)
        self.name = name

    @property
    def expected(self) -> "FiniteSumProblem":
        return self

    @property
    def f_lower(self) -> float:
        return self.objective.f_lower

    def components(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.offsets[idx], None if self.curvatures is None else self.curvatures[idx])

    def draw(self, rng, size):
        return self.components(rng.integers(0, self.n, size=size))

    def draw_curvature_mean(self, rng, size):
        if self.curvatures is None:
            return None
        return self.curvatures[rng.integers(0, self.n, size=size)].mean(axis=0)

    def draw_curvature_means(self, rng, size, count):
        if self.curvatures is None:
            return None
        return self.curvatures[rng.integers(0, self.n, size=(count, size))].mean(axis=1)

    def value(self, x):
        out = self.objective.value(x) + float(self._mean_offset @ x)
        if self._mean_curv is not None:
            out += 0.5 * float(self._mean_curv @ (x * x))
        return out

    def grad(self, x):
        g = self.objective.grad(x) + self._mean_offset
        if self._mean_curv is not None:
            g = g + self._mean_curv * x
        return g

    def hvp(self, x, v):
        hv = self.objective.hvp(x, v)
        if self._mean_curv is not None:
            hv = hv + self._mean_curv * v
        return hv

    def hessian(self, x):
        H = self.objective.hessian(x)
        if self._mean_curv is not None:
            H = H + np.diag(self._mean_curv)
        return H

    def third_directional(self, x, w):
        return self.objective.third_directional(x, w)

    def third_tensor(self, x):
        return self.objective.third_tensor(x)

    @property
    def has_hvp(self) -> bool:
        return self.objective.has_hvp


class StochasticProblem(_ComponentProblem):
    """``f(x) = E[F(x; xi)]`` with zero-mean noise pairs.

    Offsets are uniform on ``[-offset_scale, offset_scale]^d``.  Diagonal
    curvatures are ``curvature_scale`` times independent random signs, so a
    minibatch mean is an exact binomial draw and sampled HVPs cost one draw
    per coordinate.  The base objective is exposed as :attr:`expected` for
    certification only.
    """

    def __init__(self, objective: Objective, offset_scale: float, curvature_scale: float = 0.0,
                 constants=None, domain: Optional[Domain] = None, name: str = "stochastic"):
        self.objective = objective
        self.offset_scale = float(offset_scale)
        self.curvature_scale = float(curvature_scale)
        self.constants = constants
        self.domain = domain or Domain("ball", math.inf)
        self.name = name
        self.n = math.inf

    @property
    def expected(self) -> Objective:
        return self.objective

    @property
    def f_lower(self) -> float:
        return self.objective.f_lower

    def draw(self, rng, size):
        d = self.dim
        off = rng.uniform(-self.offset_scale, self.offset_scale, size=(size, d))
        curv = None
        if self.curvature_scale > 0:
            curv = self.curvature_scale * (2.0 * rng.integers(0, 2, size=(size, d)) - 1.0)
        return Batch(off, curv)

    def draw_curvature_mean(self, rng, size):
        if self.curvature_scale == 0:
            return None
        return self.curvature_scale * (2.0 * rng.binomial(size, 0.5, size=self.dim) / size - 1.0)

    def draw_curvature_means(self, rng, size, count):
        if self.curvature_scale == 0:
            return None
        return self.curvature_scale * (2.0 * rng.binomial(size, 0.5, size=(count, self.dim)) / size - 1.0)


# ---------------------------------------------------------------------------
# Counted operations


def _as_point(problem, x) -> Vector:
    if isinstance(problem, _ComponentProblem):
        return problem.check_point(x)
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim,):
        raise ContractViolation(f"expected a point of shape ({problem.dim},), got {x.shape}")
    return x


def full_gradient(problem, x, counters: Optional[Counters] = None) -> Vector:
    """Exact gradient ``(1/n) sum_i grad f_i(x)``; costs ``n`` gradient units."""
    x = _as_point(problem, x)
    if counters is not None:
        counters.tg += int(getattr(problem, "n", 1))
    return problem.grad(x)


def subsampled_gradient(problem, x, batch_size: int, rng: np.random.Generator,
                        counters: Optional[Counters] = None) -> Vector:
    """Mean of ``batch_size`` independently sampled component gradients."""
    if int(batch_size) < 1:
        raise ContractViolation(f"batch_size must be >= 1, got {batch_size}")
    x = _as_point(problem, x)
    batch = problem.draw(rng, int(batch_size))
    if counters is not None:
        counters.tg += int(batch_size)
    return problem.batch_grad(batch, x)


def fd_radius(x: Vector, v: Vector) -> float:
    return max(1e-5, 1e-5 * float(np.linalg.norm(x))) / max(1.0, float(np.linalg.norm(v)))


def hvp(problem, x, v, counters: Optional[Counters] = None, fallback: Optional[bool] = None) -> Vector:
    """Hessian-vector product of the full (or deterministic) objective.

    Uses the analytic product when the problem has one.  Otherwise, or when
    ``fallback=True``, uses the forward gradient difference
    ``(grad f(x + r v) - grad f(x)) / r`` with
    ``r = max(1e-5, 1e-5 ||x||) / max(1, ||v||)``.
    """
    x = _as_point(problem, x)
    v = np.asarray(v, dtype=float)
    if v.shape != x.shape:
        raise ContractViolation(f"direction shape {v.shape} does not match point {x.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractViolation("direction has non-finite entries")
    use_fd = (not problem.has_hvp) if fallback is None else fallback
    if counters is not None:
        counters.th += 1
        if use_fd:
            counters.tg += 2
    if not use_fd:
        return problem.hvp(x, v)
    r = fd_radius(x, v)
    return (problem.grad(x + r * v) - problem.grad(x)) / r


def sampled_hvp(problem, x, v, batch_size: int, rng: np.random.Generator,
                counters: Optional[Counters] = None, fallback: bool = False) -> Vector:
    """Mean of ``batch_size`` sampled component HVPs (or gradient differences)."""
    if int(batch_size) < 1:
        raise ContractViolation(f"batch_size must be >= 1, got {batch_size}")
    if counters is not None:
        counters.th += int(batch_size)
        if fallback:
            counters.tg += 2 * int(batch_size)
    if not fallback:
        hv = problem.objective.hvp(x, v)
        curv = problem.draw_curvature_mean(rng, int(batch_size))
        return hv if curv is None else hv + curv * v
    batch = problem.draw(rng, int(batch_size))
    r = fd_radius(x, v)
    return (problem.batch_grad(batch, x + r * v) - problem.batch_grad(batch, x)) / r


# ---------------------------------------------------------------------------
# Derivative verification


@dataclass
class DerivativeReport:
    grad_errors: list = field(default_factory=list)
    hvp_errors: list = field(default_factory=list)
    tol: float = 1e-5
    passed: bool = True

    @property
    def max_grad_error(self) -> float:
        return max(self.grad_errors, default=0.0)

    @property
    def max_hvp_error(self) -> float:
        return max(self.hvp_errors, default=0.0)


def _rel_err(a, b) -> float:
    a = np.atleast_1d(a)
    b = np.atleast_1d(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1.0))


def check_derivatives(problem, x, tol: float = 1e-5, rng: Optional[np.random.Generator] = None,
                      n_directions: Optional[int] = None) -> DerivativeReport:
    """Compare analytic gradient/HVP with central finite differences.

    Along each random unit direction ``u`` the directional derivative
    ``<grad f(x), u>`` is checked against ``(f(x+hu) - f(x-hu)) / 2h`` and
    ``H(x) u`` against ``(grad f(x+hu) - grad f(x-hu)) / 2h``.  Errors are
    relative to ``max(|a|, |b|, 1)``.
    """
    if not tol > 0:
        raise ContractViolation(f"tol must be positive, got {tol}")
    x = _as_point(problem, x)
    rng = rng if rng is not None else np.random.default_rng(0)
    d = x.shape[0]
    k = max(d, n_directions or d)
    h = 1e-5 * max(1.0, float(np.linalg.norm(x)))
    g = problem.grad(x)
    report = DerivativeReport(tol=tol)
    for _ in range(k):
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        fd_dir = (problem.value(x + h * u) - problem.value(x - h * u)) / (2 * h)
        report.grad_errors.append(_rel_err(float(g @ u), fd_dir))
        if problem.has_hvp:
            fd_hv = (problem.grad(x + h * u) - problem.grad(x - h * u)) / (2 * h)
            report.hvp_errors.append(_rel_err(problem.hvp(x, u), fd_hv))
    report.passed = report.max_grad_error <= tol and report.max_hvp_error <= tol
    return report


# ---------------------------------------------------------------------------
# Built-in test problems

PROBLEM_NAMES = ("separable-quartic", "coupled-saddle", "rayleigh-cubic")
BOX_RADIUS = 2.0
BALL_RADIUS = 2.0


def _random_orthogonal(rng, d) -> NDArray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _planted_spectrum(d: int, n_negative: int, lam_min: float) -> NDArray:
    neg = np.linspace(lam_min, lam_min / 2, n_negative) if n_negative > 1 else np.array([lam_min])
    pos = np.linspace(0.5, 1.5, d - n_negative) if d - n_negative > 1 else np.full(d - n_negative, 1.0)
    return np.concatenate([neg, pos])


def _noise_pairs(rng, n, d, sigma, curvature_noise):
    offsets = rng.uniform(-sigma / math.sqrt(d), sigma / math.sqrt(d), size=(n, d))
    offsets -= offsets.mean(axis=0)
    curv = None
    if curvature_noise > 0:
        curv = rng.uniform(-curvature_noise, curvature_noise, size=(n, d))
        curv -= curv.mean(axis=0)
    return offsets, curv


def make_test_problem(name: str, d: int, n: Optional[int] = None, seed: int = 0, *,
                      sigma: float = 1.0, curvature_noise: float = 0.0, kappa: float = 1.0,
                      mu: float = 1.0, lam_min: float = -1.0):
    """Build a named test problem with certified smoothness constants.

    ``n`` gives a :class:`FiniteSumProblem` with ``n`` components; ``n=None``
    gives a :class:`StochasticProblem`.  Constants hold on the attached
    :class:`Domain`: the box ``||x||_inf <= 2`` for ``separable-quartic`` and
    the ball ``||x||_2 <= 2`` for the other two.

    ``separable-quartic``
        ``sum_j (x_j^4/4 - x_j^2/2)``; on the box ``L1 = 11``, ``L2 = 12``,
        ``L3 = 6`` (the last one globally).
    ``coupled-saddle``
        ``1/2 x^T A x + kappa/4 ||x||^4`` with ``A = Q diag(lam) Q^T``, the
        ``max(1, d // 5)`` smallest eigenvalues spread over
        ``[lam_min, lam_min/2]`` and the rest over ``[0.5, 1.5]``.
        ``L1 = max(lam_max(A) + 3 kappa R^2, -lam_min)``, ``L2 = 6 kappa R``,
        ``L3 = 2 kappa sqrt(3d + 6)``.
    ``rayleigh-cubic``
        a single planted eigenvalue ``lam_min`` along a random unit ``u`` plus
        the cubic term ``mu/6 (u^T x)^3``; it adds ``mu R`` to ``L1`` and
        ``mu`` to ``L2`` and leaves ``L3`` unchanged.

    Component noise: offsets uniform on ``[-sigma/sqrt(d), sigma/sqrt(d)]^d``
    (mean-centred in the finite-sum case) and optional diagonal curvature
    noise of amplitude ``curvature_noise``, which adds to ``L1``.  Finite-sum
    curvatures are uniform on ``[-c, c]``; stochastic ones are ``+-c``.
    """
    if name not in PROBLEM_NAMES:
        raise ConfigurationError(f"unknown problem {name!r}; expected one of {PROBLEM_NAMES}")
    if int(d) < 1:
        raise ConfigurationError(f"dimension must be >= 1, got {d}")
    if n is not None and int(n) < 1:
        raise ConfigurationError(f"component count must be >= 1, got {n}")
    if lam_min >= 0:
        raise ConfigurationError("lam_min must be negative to plant a saddle")
    d = int(d)
    rng = np.random.default_rng(seed)

    if name == "separable-quartic":
        objective = SeparableQuartic(d)
        domain = Domain("box", BOX_RADIUS)
        L1, L2, L3 = 11.0, 12.0, 6.0
    else:
        R = BALL_RADIUS
        Q = _random_orthogonal(rng, d)
        if name == "coupled-saddle":
            lam = _planted_spectrum(d, max(1, d // 5), lam_min)
            mu_eff, u = 0.0, None
        else:
            lam = _planted_spectrum(d, 1, lam_min)
            mu_eff, u = float(mu), Q[:, 0]
        A = (Q * lam) @ Q.T
        objective = QuarticSaddle(A, kappa=kappa, u=u, mu=mu_eff)
        domain = Domain("ball", R)
        L1 = max(lam.max() + 3 * kappa * R**2 + abs(mu_eff) * R, -(lam.min() - abs(mu_eff) * R))
        L2 = 6 * kappa * R + abs(mu_eff)
        L3 = 2 * kappa * math.sqrt(3 * d + 6)

    L1 += curvature_noise
    delta_f = objective.value(np.zeros(d)) - objective.f_lower
    rmax = domain.max_norm(d)

    if n is None:
        offset_scale = sigma / math.sqrt(d)
        sig = sigma + curvature_noise * rmax
        var = sigma**2 / 3 + (curvature_noise * rmax) ** 2
        constants = SmoothnessConstants(L1, L2, L3, sigma=sig, delta_f=delta_f, variance_bound=var)
        return StochasticProblem(objective, offset_scale, curvature_noise, constants, domain, name)

    offsets, curv = _noise_pairs(rng, int(n), d, sigma, curvature_noise)
    off_norm = np.linalg.norm(offsets, axis=1)
    curv_sup = np.zeros(int(n)) if curv is None else np.max(np.abs(curv), axis=1)
    dev = off_norm + curv_sup * rmax
    sig = float(dev.max())
    var = float(np.mean(dev**2))
    constants = SmoothnessConstants(L1, L2, L3, sigma=sig, delta_f=delta_f, variance_bound=var)
    return FiniteSumProblem(objective, offsets, curv, constants, domain, name)


def quadratic_problem(A, n: int = 1, sigma: float = 0.0, seed: int = 0, L2: float = 1.0, L3: float = 1.0):
    """Finite-sum quadratic with Hessian ``A`` (test fixture for planted spectra)."""
    obj = Quadratic(A)
    d = obj.dim
    rng = np.random.default_rng(seed)
    offsets, _ = _noise_pairs(rng, n, d, sigma, 0.0) if sigma > 0 else (np.zeros((n, d)), None)
    eig = np.linalg.eigvalsh(obj.A)
    L1 = max(float(np.max(np.abs(eig))), 1e-12)
    dev = np.linalg.norm(offsets, axis=1)
    gap = 0.0 - obj.f_lower if math.isfinite(obj.f_lower) else 1.0
    constants = SmoothnessConstants(L1, L2, L3, sigma=float(dev.max()),
                                    delta_f=max(gap, 1e-12), variance_bound=float(np.mean(dev**2)))
    return FiniteSumProblem(obj, offsets, None, constants, Domain("ball", math.inf), "quadratic")


def stochastic_quadratic(A, sigma: float = 0.5, curvature_noise: float = 0.0, L2: float = 1.0,
                         L3: float = 1.0):
    obj = Quadratic(A)
    d = obj.dim
    eig = np.linalg.eigvalsh(obj.A)
    L1 = float(np.max(np.abs(eig))) + curvature_noise
    gap = -obj.f_lower if math.isfinite(obj.f_lower) else 1.0
    constants = SmoothnessConstants(L1, L2, L3, sigma=sigma, delta_f=max(gap, 1e-12),
                                    variance_bound=sigma**2 / 3)
    return StochasticProblem(obj, sigma / math.sqrt(d), curvature_noise, constants,
                             Domain("ball", math.inf), "quadratic")
