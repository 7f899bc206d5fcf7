"""Acceptance suite: seven end-to-end checks with runtime limits.

Each ``criterion_*`` function runs its experiment at fixed seeds and returns
a :class:`CriterionResult`.  A criterion passes only if every sub-check
passes and the wall time stays under its limit.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import stats

from .descent import ncd3_step
from .flash import Targets, counter_audit, flash_finite_sum, stochastic_batch_size
from .harness import (
    binomial_lower_bound,
    check_experiment,
    decrement_experiment,
    default_config,
    epoch_bound_experiment,
    eval_advantage_experiment,
    run_experiment,
    true_lambda_min,
)
from .negcurve import BOT, Direction, Inconclusive, NCConfig, make_nc_finder
from .oracle import PROBLEM_NAMES, Counters, make_test_problem
from .rng import make_rng
from .scsg import ScsgConfig, geometric_sample, scsg_epoch

logger = logging.getLogger(__name__)


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: dict
    runtime: float
    limit: float
    details: dict = field(default_factory=dict)

    @property
    def within_time(self) -> bool:
        return self.runtime < self.limit

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.within_time

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        failed = [k for k, v in self.checks.items() if not v]
        if not self.within_time:
            failed.append(f"runtime {self.runtime:.1f}s >= {self.limit:.0f}s")
        tail = "" if not failed else " failed: " + ", ".join(failed)
        return f"[{status}] criterion {self.number}: {self.title} ({self.runtime:.1f}s / {self.limit:.0f}s){tail}"


def _timed(number, title, limit, body: Callable[[], tuple]) -> CriterionResult:
    t0 = time.perf_counter()
    checks, details = body()
    return CriterionResult(number, title, checks, time.perf_counter() - t0, limit, details)


# ---------------------------------------------------------------------------
# 1. derivatives


def criterion_derivatives(points: int = 100) -> CriterionResult:
    def body():
        checks, details = {}, {}
        for name in PROBLEM_NAMES:
            for label, n, noise in (("finite-sum", 50, 0.1), ("stochastic", None, 0.0)):
                problem = make_test_problem(name, 10, n, seed=3, curvature_noise=noise)
                rows = check_experiment(problem, points, make_rng(11), tol=1e-5)
                key = f"{name}/{label}"
                checks[key] = all(r["passed"] for r in rows) and len(rows) == points
                details[key] = max(max(r["grad_error"], r["hvp_error"]) for r in rows)
        return checks, details

    return _timed(1, "derivative soundness", 10.0, body)


# ---------------------------------------------------------------------------
# 2. negative-curvature finder contract


def sample_negative_point(problem, rng, eps_H):
    """Point whose dense-oracle lambda_min is at most ``-eps_H``."""
    d = problem.dim
    for _ in range(100):
        if problem.name == "separable-quartic":
            x = rng.uniform(-0.35, 0.35, size=d)
        else:
            u = rng.standard_normal(d)
            x = u / np.linalg.norm(u) * 0.3 * rng.random()
        if true_lambda_min(problem, x) <= -eps_H:
            return x
    raise RuntimeError("could not sample a negative-curvature point")


def sample_bot_point(problem, rng, eps_H):
    """Point whose dense-oracle lambda_min is at least ``-eps_H / 2``."""
    d = problem.dim
    for _ in range(100):
        if problem.name == "separable-quartic":
            x = rng.uniform(0.55, 1.5, size=d) * rng.choice([-1.0, 1.0], size=d)
        else:
            u = rng.standard_normal(d)
            x = u / np.linalg.norm(u) * rng.uniform(1.2, 1.9)
        if true_lambda_min(problem, x) >= -eps_H / 2:
            return x
    raise RuntimeError("could not sample a positive-curvature point")


def nc_contract_trials(problem, eps_H: float, delta: float, trials: int, seed: int, negative: bool,
                       config=None) -> dict:
    """Run the finder at fresh sampled points; tally outcomes against the dense oracle."""
    targets = Targets(0.1, eps_H, delta=delta)
    finder = make_nc_finder(problem, problem.constants, targets, config)
    point_rng = make_rng(seed, 1)
    good = unsound = inconclusive = 0
    H_of = problem.expected
    for t in range(trials):
        x = (sample_negative_point if negative else sample_bot_point)(problem, point_rng, eps_H)
        try:
            out = finder(x, make_rng(seed, 100 + t), Counters())
        except Inconclusive:
            inconclusive += 1
            continue
        if isinstance(out, Direction):
            ok_norm = abs(np.linalg.norm(out.v) - 1.0) <= 1e-10
            true_rho = float(out.v @ H_of.hvp(x, out.v))
            sound = ok_norm and out.rayleigh <= -eps_H / 2 + 1e-8 and true_rho <= -eps_H / 2 + 1e-8
            unsound += not sound
            good += negative and sound
        elif out is BOT:
            good += not negative
    return {"trials": trials, "good": int(good), "unsound": int(unsound), "inconclusive": inconclusive,
            "lower99": binomial_lower_bound(int(good), trials)}


def criterion_nc_contract(trials: int = 200, dims=(2, 10, 50), eps_H: float = 0.5,
                          delta: float = 0.1) -> CriterionResult:
    def body():
        checks, details = {}, {}
        for name in ("separable-quartic", "coupled-saddle"):
            for d in dims:
                setups = (
                    ("hvp-power", make_test_problem(name, d, 20, seed=5), None),
                    ("oja", make_test_problem(name, d, None, seed=5, curvature_noise=0.5), NCConfig("oja")),
                )
                for method, problem, cfg in setups:
                    for negative in (True, False):
                        region = "negative" if negative else "bot"
                        res = nc_contract_trials(problem, eps_H, delta, trials, 17 + d, negative, cfg)
                        key = f"{name}/d={d}/{method}/{region}"
                        checks[key] = res["unsound"] == 0 and res["lower99"] >= 1 - delta
                        details[key] = res
        return checks, details

    return _timed(2, "negative-curvature finder contract", 120.0, body)


# ---------------------------------------------------------------------------
# 3 and 4. decrement and third-order advantage


def _quartic_saddle_stats(trials: int = 1000):
    problem = make_test_problem("separable-quartic", 10, 100, seed=0)
    return decrement_experiment(problem, np.zeros(10), Targets(0.1, 0.5), trials, make_rng(1))


def criterion_decrement(trials: int = 1000) -> CriterionResult:
    def body():
        st = _quartic_saddle_stats(trials)
        # Sign-averaged decrement along each returned v, computed in closed form.
        eta = math.sqrt(3 * 0.5 / 6.0)
        v = [r for r in st.rows if r["variant"] == "ncd3" and r["nc_outcome"] == "direction"]
        sto = make_test_problem("separable-quartic", 10, None, seed=0, curvature_noise=0.25)
        st_sto = decrement_experiment(sto, np.zeros(10), Targets(0.1, 0.5), trials, make_rng(2),
                                      with_baseline=False)
        checks = {
            "finite-sum bound": st.passed,
            "finite-sum unconditional bound": st.unconditional_passed,
            "stochastic bound": st_sto.passed,
            "no excluded trials": st.excluded == 0,
            "bound value": abs(st.bound - 0.015625) < 1e-15,
        }
        details = {"mean": st.mean_decrement, "stderr": st.stderr, "bound": st.bound,
                   "stochastic_mean": st_sto.mean_decrement, "stochastic_stderr": st_sto.stderr,
                   "eta": eta, "trials": len(v)}
        return checks, details

    return _timed(3, "NCD3 expected decrement", 60.0, body)


def criterion_advantage(trials: int = 1000) -> CriterionResult:
    def body():
        st = _quartic_saddle_stats(trials)
        return {"ratio >= 10": bool(st.ratio >= 10)}, {"ratio": st.ratio, "ncd3_mean": st.mean_decrement,
                                                       "ncd2_mean": st.ncd2_mean}

    return _timed(4, "third-order step advantage", 60.0, body)


# ---------------------------------------------------------------------------
# 5. SCSG one-epoch bound


def criterion_scsg_epoch(epochs: int = 100) -> CriterionResult:
    def body():
        checks, details = {}, {}
        fs = make_test_problem("separable-quartic", 10, 1000, seed=0)
        _, rep, cfg = epoch_bound_experiment(fs, epochs, make_rng(21))
        checks["finite-sum"] = bool(rep.asserted and rep.passed)
        details["finite-sum"] = {"B": cfg.B, "mean": rep.mean_grad_sq, "rhs": rep.rhs, "slack": rep.slack}
        st = make_test_problem("separable-quartic", 10, None, seed=0)
        B = stochastic_batch_size(st.constants, Targets(0.25, 0.35).resolve(st.constants))
        _, rep, cfg = epoch_bound_experiment(st, epochs, make_rng(22), B=B)
        checks["stochastic"] = bool(rep.asserted and rep.passed)
        checks["B = 5068"] = B == 5068
        details["stochastic"] = {"B": cfg.B, "mean": rep.mean_grad_sq, "rhs": rep.rhs, "slack": rep.slack,
                                 "additive": rep.additive}
        return checks, details

    return _timed(5, "SCSG one-epoch bound", 120.0, body)


# ---------------------------------------------------------------------------
# 6. end to end


def criterion_end_to_end(seeds=tuple(range(1, 21))) -> CriterionResult:
    def body():
        checks, details = {}, {}
        for alg in ("flash-fs", "flash-st"):
            cfg = replace(default_config("run", alg), seeds=tuple(seeds))
            res = run_experiment(cfg, write=False)
            rate = res.summary["success_rate"]
            checks[f"{alg} >= 90% certified"] = rate >= 0.9
            details[alg] = {"success_rate": rate, "median_tg": res.summary["median_tg"]}
        problem = make_test_problem("separable-quartic", 10, 100, seed=0)
        adv = eval_advantage_experiment(problem, np.zeros(10), Targets(0.01, 0.1), seeds)
        checks["median T_g ncd3 <= ncd2"] = adv.median_ncd3 <= adv.median_ncd2
        checks["sign test p <= 0.1"] = adv.p_value <= 0.1
        details["advantage"] = {"median_ncd3": adv.median_ncd3, "median_ncd2": adv.median_ncd2,
                                "p": adv.p_value, "excluded": adv.excluded}
        return checks, details

    return _timed(6, "end-to-end certified SOSP", 300.0, body)


# ---------------------------------------------------------------------------
# 7. structural invariants


def chi_square_geometric(p: float, draws: int, rng) -> float:
    """Goodness-of-fit p-value of the geometric sampler, tail pooled into one bin."""
    samples = np.array([geometric_sample(p, rng) for _ in range(draws)])
    kmax = int(np.ceil(np.log(5.0 / draws) / np.log(p)))  # expected count >= 5 per bin
    kmax = max(kmax, 1)
    probs = (1 - p) * p ** np.arange(kmax)
    probs = np.append(probs, p**kmax)
    observed = np.bincount(np.minimum(samples, kmax), minlength=kmax + 1)
    return float(stats.chisquare(observed, probs * draws).pvalue)


def criterion_structure() -> CriterionResult:
    def body():
        checks, details = {}, {}
        problem = make_test_problem("separable-quartic", 10, 100, seed=0)
        targets = Targets(0.01, 0.1)
        recs = [flash_finite_sum(problem, np.zeros(10), problem.constants, targets, rng=make_rng(s))
                for s in range(1, 6)]
        checks["phase exclusivity"] = all(
            len(r.log) == sum(r.phase_counts.values())
            and all(e.phase in ("scsg-epoch", "ncd3", "terminate") for e in r.log)
            and [e.k for e in r.log] == list(range(1, len(r.log) + 1)) for r in recs)
        checks["counter audit"] = all(bool(counter_audit(r, problem.n)) for r in recs)
        checks["termination soundness"] = all(
            r.termination == "bot-returned" and r.log[-1].below_threshold and r.log[-1].nc_outcome == "bot"
            for r in recs)

        pvals = [chi_square_geometric(p, 10_000, make_rng(31, i)) for i, p in enumerate((0.5, 0.9, 0.99))]
        checks["geometric chi-square"] = min(pvals) > 0.001
        details["geometric p-values"] = pvals

        cfg = ScsgConfig.from_constants(problem.constants.L1, problem.n)
        x0 = np.full(10, 0.3)
        g = problem.grad(x0)
        out = scsg_epoch(problem, x0, cfg, anchor_grad=g, rng=make_rng(5), T=1)
        checks["anchor-step identity"] = bool(np.max(np.abs(out.x_out - (x0 - cfg.eta * g))) <= 1e-12)

        finder = make_nc_finder(problem, problem.constants, targets.resolve(problem.constants))
        signs = []
        for t in range(2000):
            step = ncd3_step(problem, np.zeros(10), problem.constants, targets.resolve(problem.constants),
                             finder, make_rng(41, t))
            signs.append(step.sign)
        plus = int(np.sum(np.array(signs) > 0))
        p_sign = float(stats.binomtest(plus, len(signs), 0.5).pvalue)
        checks["rademacher balance"] = p_sign > 0.001
        details["rademacher"] = {"plus": plus, "n": len(signs), "p": p_sign}

        a = flash_finite_sum(problem, np.zeros(10), problem.constants, targets, rng=make_rng(9))
        b = flash_finite_sum(problem, np.zeros(10), problem.constants, targets, rng=make_rng(9))
        checks["seed determinism"] = (a.log == b.log and np.array_equal(a.x_final, b.x_final)
                                      and a.counters == b.counters)
        return checks, details

    return _timed(7, "structural invariants", 120.0, body)


CRITERIA = (
    criterion_derivatives,
    criterion_nc_contract,
    criterion_decrement,
    criterion_advantage,
    criterion_scsg_epoch,
    criterion_end_to_end,
    criterion_structure,
)


def run_all(print_fn=print) -> list:
    results = []
    for crit in CRITERIA:
        res = crit()
        print_fn(res.line())
        results.append(res)
    return results
