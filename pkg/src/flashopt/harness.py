"""Experiment runner: configs, seeded experiment matrices and artifacts.

An experiment is described by an INI file (see ``README.md`` for the full
key list)::

    [experiment]
    kind = run            ; check | escape | run | bench | certify
    algorithm = flash-fs  ; run only: flash-fs | flash-st | scsg
    seeds = 1-20

    [problem]
    name = separable-quartic
    d = 10
    n = 100               ; omit for the stochastic variant

    [targets]
    eps = 0.01
    eps_H = 0.1

Each kind writes one CSV (or JSON) table with a fixed column order plus a
JSON summary holding medians, rates, counter totals and named checks.  The
exit code is 0 exactly when every check passed and no run aborted.
"""

from __future__ import annotations

import configparser
import copy
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .descent import (
    expected_decrement_bound,
    ncd2_baseline_step,
    ncd2_step_size,
    ncd3_step,
    ncd3_step_size,
    unconditional_decrement_bound,
)
from .eigen import dense_eigensolve
from .flash import (
    DRIVERS,
    FlashConfig,
    RunRecord,
    Targets,
    certify_sosp,
    dense_hessian,
    flash_finite_sum,
    flash_stochastic,
    stochastic_batch_size,
)
from .negcurve import BOT, METHODS, Inconclusive, NCConfig, make_nc_finder
from .oracle import (
    PROBLEM_NAMES,
    ConfigurationError,
    ContractViolation,
    FiniteSumProblem,
    check_derivatives,
    make_test_problem,
)
from .rng import child_rng, make_rng
from .scsg import Z_99, ScsgConfig, epoch_progress_check, scsg_epoch

logger = logging.getLogger(__name__)

KINDS = ("check", "escape", "run", "bench", "certify")
ALGORITHMS = ("flash-fs", "flash-st", "scsg")

CSV_COLUMNS = {
    "check": ("experiment", "seed", "point", "grad_error", "hvp_error", "passed"),
    "escape": ("experiment", "seed", "trial", "variant", "nc_outcome", "sign", "decrement",
               "zeta_mean_decrement", "rayleigh", "left_domain"),
    "run": ("experiment", "seed", "phase_counts", "tg_total", "th_total", "f_final", "grad_norm_final",
            "lambda_min_final", "certified", "termination"),
    "scsg": ("experiment", "seed", "epoch", "T", "resampled", "f_start", "f_end", "grad_sq_end"),
    "bench": ("experiment", "seed", "tg_ncd3", "tg_ncd2", "certified_ncd3", "certified_ncd2", "included"),
    "certify": ("experiment", "seed", "grad_norm", "lambda_min", "pass_first_order", "pass_second_order",
                "pass"),
}


# ---------------------------------------------------------------------------
# Formatting


def format_value(value) -> str:
    """CSV cell text: floats with 17 significant digits, booleans lower-case."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if value is None:
        return ""
    return str(value)


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text with every float printed to 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list, tuple)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if isinstance(o, (float, np.floating)):
            f = float(o)
            if not math.isfinite(f):
                return "null"
            return format(f, ".17g")
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if o is None:
            return "null"
        return json.dumps(str(o))

    return enc(obj, 0) + "\n"


def phase_counts_text(counts: dict) -> str:
    return ";".join(f"{k}={counts[k]}" for k in sorted(counts))


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class ProblemSpec:
    name: str = "separable-quartic"
    d: int = 10
    n: Optional[int] = 100
    seed: int = 0
    sigma: float = 1.0
    curvature_noise: float = 0.0
    kappa: float = 1.0
    mu: float = 1.0
    lam_min: float = -1.0

    def build(self):
        return make_test_problem(self.name, self.d, self.n, self.seed, sigma=self.sigma,
                                 curvature_noise=self.curvature_noise, kappa=self.kappa, mu=self.mu,
                                 lam_min=self.lam_min)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    kind: str = "run"
    algorithm: str = "flash-fs"
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    targets: Targets = field(default_factory=lambda: Targets(0.01, 0.1))
    flash: FlashConfig = field(default_factory=FlashConfig)
    scsg: dict = field(default_factory=dict)  # B, b, eta, epochs
    seeds: tuple = (1,)
    x0: str = "origin"
    out_dir: str = "out"
    fmt: str = "csv"
    trials: int = 1000  # escape
    points: int = 100  # check
    tol: float = 1e-5  # check
    point_file: Optional[str] = None  # certify
    min_success: float = 0.9  # run: certified fraction required
    nc_delta: float = 0.1  # escape: failure rate tolerated for the NC finder
    ratio_min: float = 10.0  # escape: NCD3 / NCD2 mean-decrement ratio required
    p_max: float = 0.1  # bench: sign-test level

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.problem.name not in PROBLEM_NAMES:
            raise ConfigurationError(f"unknown problem {self.problem.name!r}")
        if self.fmt not in ("csv", "json"):
            raise ConfigurationError(f"unknown format {self.fmt!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("seeds must be distinct")
        if any(int(s) < 0 for s in self.seeds):
            raise ConfigurationError("seeds must be nonnegative")

    @property
    def driver(self) -> str:
        return "stochastic" if self.problem.n is None else "finite-sum"


_SCHEMA = {
    "experiment": {"name": str, "kind": str, "algorithm": str, "seeds": str, "x0": str, "out_dir": str,
                   "format": str, "min_success": float},
    "problem": {"name": str, "d": int, "n": str, "seed": int, "sigma": float, "curvature_noise": float,
                "kappa": float, "mu": float, "lam_min": float},
    "targets": {"eps": float, "eps_H": float, "delta": float, "delta0": float},
    "flash": {"variant": str, "K": int, "B": int, "eta": float, "project": str},
    "descent": {"variant": str, "sign_rule": str},
    "negcurve": {"method": str, "max_iters": int, "retries": int, "minibatch": int, "rayleigh_batch": int},
    "scsg": {"B": int, "b": int, "eta": float, "epochs": int, "K": int},
    "escape": {"trials": int, "nc_delta": float, "ratio_min": float},
    "check": {"points": int, "tol": float},
    "certify": {"point": str},
    "bench": {"p_max": float},
}


def parse_seeds(text: str) -> tuple:
    """``"1-5"``, ``"1,3,7"`` or a mix such as ``"1-3, 10"``."""
    seeds = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return tuple(seeds)


def _read_sections(text: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keys are case-sensitive (eps_H)
    parser.read_string(text)
    out = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        values = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigurationError(f"unknown config key {section}.{key}")
            raw = raw.strip()
            if raw == "":
                continue
            try:
                values[key] = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {section}.{key}: {raw!r}") from exc
        out[section] = values
    return out


def _flag(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def parse_config(text: str, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from INI text; missing keys keep defaults."""
    sec = _read_sections(text)
    exp = sec.get("experiment", {})
    kind = exp.get("kind", base.kind if base else "run")
    if base is not None and kind != base.kind:
        raise ConfigurationError(f"config declares kind={kind!r} but {base.kind!r} was requested")
    cfg = base or default_config(kind, exp.get("algorithm"))

    prob = dict(sec.get("problem", {}))
    if "n" in prob:
        prob["n"] = None if prob["n"].lower() in ("none", "inf", "stochastic") else int(prob["n"])
    problem = replace(cfg.problem, **prob)

    tgt = sec.get("targets", {})
    targets = replace(cfg.targets, **tgt)

    fl = dict(sec.get("flash", {}))
    algorithm = exp.get("algorithm", cfg.algorithm)
    variant = fl.pop("variant", None)
    if variant is not None:
        if variant not in DRIVERS:
            raise ConfigurationError(f"unknown flash.variant {variant!r}; expected one of {DRIVERS}")
        implied = "flash-fs" if variant == "finite-sum" else "flash-st"
        if "algorithm" in exp and exp["algorithm"] != implied and exp["algorithm"] != "scsg":
            raise ConfigurationError(f"flash.variant={variant} contradicts experiment.algorithm={algorithm}")
        if algorithm != "scsg":
            algorithm = implied
    if "project" in fl:
        fl["project"] = _flag(fl["project"])
    desc = sec.get("descent", {})
    if "variant" in desc:
        fl["descent"] = desc["variant"]
    if "sign_rule" in desc:
        fl["sign_rule"] = desc["sign_rule"]
    nc_keys = sec.get("negcurve", {})
    if nc_keys:
        if "method" in nc_keys and nc_keys["method"] not in METHODS:
            raise ConfigurationError(f"unknown negcurve.method {nc_keys['method']!r}")
        base_nc = cfg.flash.nc or NCConfig(method="oja" if problem.n is None else "hvp-power")
        fl["nc"] = replace(base_nc, **nc_keys)
    flash = replace(cfg.flash, **fl)

    scsg = dict(cfg.scsg)
    scsg.update(sec.get("scsg", {}))
    esc = sec.get("escape", {})
    chk = sec.get("check", {})
    out = replace(
        cfg,
        name=exp.get("name", cfg.name),
        kind=kind,
        algorithm=algorithm,
        problem=problem,
        targets=targets,
        flash=flash,
        scsg=scsg,
        seeds=parse_seeds(exp["seeds"]) if "seeds" in exp else cfg.seeds,
        x0=exp.get("x0", cfg.x0),
        out_dir=exp.get("out_dir", cfg.out_dir),
        fmt=exp.get("format", cfg.fmt),
        min_success=exp.get("min_success", cfg.min_success),
        trials=esc.get("trials", cfg.trials),
        nc_delta=esc.get("nc_delta", cfg.nc_delta),
        ratio_min=esc.get("ratio_min", cfg.ratio_min),
        points=chk.get("points", cfg.points),
        tol=chk.get("tol", cfg.tol),
        point_file=sec.get("certify", {}).get("point", cfg.point_file),
        p_max=sec.get("bench", {}).get("p_max", cfg.p_max),
    )
    if out.algorithm == "flash-st" and out.kind == "run" and out.problem.n is not None:
        raise ConfigurationError("flash-st needs a stochastic problem (omit problem.n)")
    if out.algorithm == "flash-fs" and out.kind == "run" and out.problem.n is None:
        raise ConfigurationError("flash-fs needs a finite-sum problem (set problem.n)")
    return out


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def default_config(kind: str = "run", algorithm: Optional[str] = None) -> ExperimentConfig:
    """Built-in settings for each experiment kind, matching the acceptance runs."""
    seeds20 = tuple(range(1, 21))
    if kind == "check":
        return ExperimentConfig(name="check", kind="check", seeds=(0,), points=100)
    if kind == "escape":
        return ExperimentConfig(name="escape", kind="escape", targets=Targets(0.1, 0.5), seeds=(1,),
                                trials=1000)
    if kind == "bench":
        return ExperimentConfig(name="bench", kind="bench", seeds=seeds20)
    if kind == "certify":
        return ExperimentConfig(name="certify", kind="certify", seeds=(0,))
    if kind != "run":
        raise ConfigurationError(f"unknown experiment kind {kind!r}")
    algorithm = algorithm or "flash-fs"
    if algorithm == "flash-st":
        return ExperimentConfig(name="flash-st", kind="run", algorithm="flash-st",
                                problem=ProblemSpec(n=None), targets=Targets(0.25, 0.35), seeds=seeds20)
    if algorithm == "scsg":
        return ExperimentConfig(name="scsg", kind="run", algorithm="scsg", problem=ProblemSpec(n=1000),
                                targets=Targets(0.25, 0.35), seeds=(1,), scsg={"epochs": 100})
    if algorithm != "flash-fs":
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    return ExperimentConfig(name="flash-fs", kind="run", algorithm="flash-fs", seeds=seeds20)


def resolve_x0(spec: str, problem, seed: int = 0) -> np.ndarray:
    d = problem.dim
    if spec == "origin":
        return np.zeros(d)
    if spec == "random":
        return problem.domain.sample(make_rng(seed, 7), d)
    values = [float(v) for v in spec.replace(",", " ").split()]
    if len(values) != d:
        raise ConfigurationError(f"x0 has {len(values)} entries, problem has d={d}")
    return np.array(values)


def load_point(path) -> np.ndarray:
    """Point file: a JSON list (or an object with a ``point`` list) or whitespace-separated numbers."""
    text = Path(path).read_text().strip()
    if text.startswith("[") or text.startswith("{"):
        data = json.loads(text)
        if isinstance(data, dict):
            data = data["point"]
        return np.asarray(data, dtype=float)
    return np.array([float(v) for v in text.replace(",", " ").split()])


# ---------------------------------------------------------------------------
# Statistics helpers


def binomial_lower_bound(successes: int, trials: int, confidence: float = 0.99) -> float:
    """One-sided Clopper-Pearson lower confidence bound on a success probability."""
    if trials == 0:
        return 0.0
    if successes == 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - confidence, successes, trials - successes + 1))


def sign_test(a: Sequence[float], b: Sequence[float], alternative: str = "less") -> tuple[int, int, float]:
    """Paired sign test of ``a`` against ``b``; ties are dropped.

    Returns ``(wins, informative_pairs, p_value)`` where a win is ``a < b``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    m = wins + losses
    if m == 0:
        return 0, 0, 1.0
    alt = {"less": "greater", "greater": "less", "two-sided": "two-sided"}[alternative]
    return wins, m, float(stats.binomtest(wins, m, 0.5, alternative=alt).pvalue)


# ---------------------------------------------------------------------------
# Experiments


def check_experiment(problem, points: int, rng: np.random.Generator, tol: float = 1e-5):
    """Derivative check at ``points`` random points of the problem's domain.

    Stochastic problems are checked through their expected objective.
    """
    target = problem if isinstance(problem, FiniteSumProblem) else problem.expected
    rows = []
    for i in range(points):
        x = problem.domain.sample(rng, problem.dim)
        report = check_derivatives(target, x, tol=tol, rng=rng)
        rows.append({"point": i, "grad_error": report.max_grad_error, "hvp_error": report.max_hvp_error,
                     "passed": report.passed})
    return rows


def true_lambda_min(problem, x) -> float:
    target = problem.expected
    return dense_eigensolve(dense_hessian(target, np.asarray(x, dtype=float))).lambda_min


@dataclass
class DecrementStats:
    trials: int
    nc_successes: int
    nc_success_rate: float
    nc_success_lower: float
    mean_decrement: float  # zeta-averaged, NCD3
    stderr: float
    realised_mean: float
    bound: float
    unconditional_bound: float
    unconditional_mean: float
    unconditional_stderr: float
    ncd2_mean: float
    ratio: float
    excluded: int
    passed: bool
    unconditional_passed: bool
    rows: list = field(default_factory=list, repr=False)


def _zeta_average(f, x, v, step) -> float:
    return float(f(x) - 0.5 * (f(x + step * v) + f(x - step * v)))


def decrement_experiment(problem, x, targets: Targets, trials: int, rng: np.random.Generator,
                         constants=None, nc_config: Optional[NCConfig] = None,
                         with_baseline: bool = True) -> DecrementStats:
    """Repeated NCD3 steps from one saddle, with the NCD2 baseline alongside.

    For every trial the finder is run afresh.  The asserted statistic is the
    sign-averaged decrement ``f(x) - (f(x + eta v) + f(x - eta v)) / 2`` over
    trials where the finder returned a direction whose curvature the dense
    oracle confirms; trials whose step leaves the certified domain are
    excluded.  The unconditional mean counts failed trials as zero decrease.
    """
    constants = constants or problem.constants
    x = np.asarray(x, dtype=float)
    targets = targets.resolve(constants)
    lam = true_lambda_min(problem, x)
    if lam > -targets.eps_H:
        raise ContractViolation(f"precondition unverified: lambda_min={lam:.6g} > -eps_H={-targets.eps_H}")
    finder = make_nc_finder(problem, constants, targets, nc_config)
    f = problem.expected.value
    H = dense_hessian(problem.expected, x)
    eta = ncd3_step_size(constants, targets)
    alpha = ncd2_step_size(constants, targets)

    rows, zeta3, uncond, dec2 = [], [], [], []
    successes = excluded = 0
    for t in range(trials):
        trial_rng = child_rng(rng)
        try:
            step = ncd3_step(problem, x, constants, targets, finder, trial_rng)
        except Inconclusive:
            step = None
        ok = step is not None and step is not BOT
        if ok:
            true_rho = float(step.direction @ H @ step.direction)
            ok = true_rho <= -0.5 * targets.eps_H + 1e-8
        if not ok:
            outcome = "inconclusive" if step is None else ("bot" if step is BOT else "unsound")
            rows.append({"trial": t, "variant": "ncd3", "nc_outcome": outcome, "sign": 0,
                         "decrement": math.nan, "zeta_mean_decrement": math.nan, "rayleigh": math.nan,
                         "left_domain": False})
            uncond.append(0.0)
            continue
        successes += 1
        zm = _zeta_average(f, x, step.direction, eta)
        left = not (problem.domain.contains(x + eta * step.direction)
                    and problem.domain.contains(x - eta * step.direction))
        rows.append({"trial": t, "variant": "ncd3", "nc_outcome": "direction", "sign": step.sign,
                     "decrement": step.f_before - step.f_after, "zeta_mean_decrement": zm,
                     "rayleigh": step.rayleigh, "left_domain": left})
        if left:
            excluded += 1
        else:
            zeta3.append(zm)
        uncond.append(step.f_before - step.f_after)

        if with_baseline:
            base = ncd2_baseline_step(problem, x, constants, targets, finder, trial_rng)
            if base is not BOT:
                rows.append({"trial": t, "variant": "ncd2", "nc_outcome": "direction", "sign": base.sign,
                             "decrement": base.f_before - base.f_after,
                             "zeta_mean_decrement": _zeta_average(f, x, base.direction, alpha),
                             "rayleigh": base.rayleigh, "left_domain": not problem.domain.contains(base.y)})
                dec2.append(base.f_before - base.f_after)

    k = len(zeta3)
    mean = float(np.mean(zeta3)) if k else math.nan
    se = float(np.std(zeta3, ddof=1) / math.sqrt(k)) if k > 1 else math.nan
    bound = expected_decrement_bound(constants, targets)
    ubound = unconditional_decrement_bound(constants, targets)
    um = float(np.mean(uncond)) if uncond else math.nan
    use = float(np.std(uncond, ddof=1) / math.sqrt(len(uncond))) if len(uncond) > 1 else math.nan
    mean2 = float(np.mean(dec2)) if dec2 else math.nan
    realised = [r["decrement"] for r in rows if r["variant"] == "ncd3" and r["nc_outcome"] == "direction"]
    return DecrementStats(
        trials=trials,
        nc_successes=successes,
        nc_success_rate=successes / trials if trials else math.nan,
        nc_success_lower=binomial_lower_bound(successes, trials),
        mean_decrement=mean,
        stderr=se,
        realised_mean=float(np.mean(realised)) if realised else math.nan,
        bound=bound,
        unconditional_bound=ubound,
        unconditional_mean=um,
        unconditional_stderr=use,
        ncd2_mean=mean2,
        ratio=mean / mean2 if dec2 and mean2 > 0 else math.nan,
        excluded=excluded,
        passed=bool(k > 1 and mean >= bound - Z_99 * se),
        unconditional_passed=bool(len(uncond) > 1 and um >= ubound - Z_99 * use),
        rows=rows,
    )


@dataclass
class FlashOutcome:
    seed: int
    record: Optional[RunRecord]
    certificate: object
    f_final: float
    error: str = ""

    @property
    def success(self) -> bool:
        return (self.record is not None and self.record.termination == "bot-returned"
                and self.certificate is not None and self.certificate.passed)


def run_flash(problem, driver: str, x0, targets: Targets, config: FlashConfig, seed: int,
              K: Optional[int] = None) -> FlashOutcome:
    """One seeded FLASH run followed by dense certification of its output."""
    rng = make_rng(seed)
    constants = problem.constants
    try:
        if driver == "finite-sum":
            record = flash_finite_sum(problem, x0, constants, targets, K, config, rng)
        else:
            record = flash_stochastic(problem, x0, constants, targets, K, config, rng)
    except (Inconclusive, ContractViolation, AssertionError, FloatingPointError) as exc:
        logger.error("seed %d aborted: %s", seed, exc)
        return FlashOutcome(seed, None, None, math.nan, f"{type(exc).__name__}: {exc}")
    cert = certify_sosp(problem, record.x_final, targets)
    return FlashOutcome(seed, record, cert, float(problem.expected.value(record.x_final)))


@dataclass
class AdvantageResult:
    rows: list
    median_ncd3: float
    median_ncd2: float
    wins: int
    informative: int
    p_value: float
    p_two_sided: float
    excluded: list
    passed: bool


def eval_advantage_experiment(problem, x0, targets: Targets, seeds: Sequence[int],
                              config: Optional[FlashConfig] = None, p_max: float = 0.1,
                              constants=None) -> AdvantageResult:
    """Paired FLASH runs with NCD3 and with the NCD2 baseline, one pair per seed.

    Both arms of a pair use the same seed, so their anchor, epoch and finder
    streams coincide until the trajectories diverge.  Pairs where either arm
    fails to reach a certified point are excluded and logged.
    """
    if len(seeds) < 20:
        raise ContractViolation(f"need at least 20 seeds, got {len(seeds)}")
    config = config or FlashConfig()
    if constants is not None:
        problem = _with_constants(problem, constants)
    driver = "stochastic" if math.isinf(problem.n) else "finite-sum"
    rows, excluded = [], []
    for seed in seeds:
        a = run_flash(problem, driver, x0, targets, replace(config, descent="ncd3"), seed)
        b = run_flash(problem, driver, x0, targets, replace(config, descent="ncd2"), seed)
        include = a.success and b.success
        if not include:
            logger.warning("seed %d excluded from the paired comparison", seed)
            excluded.append(seed)
        rows.append({"seed": seed,
                     "tg_ncd3": a.record.tg_total if a.record else -1,
                     "tg_ncd2": b.record.tg_total if b.record else -1,
                     "certified_ncd3": a.success, "certified_ncd2": b.success, "included": include})
    kept = [r for r in rows if r["included"]]
    t3 = [r["tg_ncd3"] for r in kept]
    t2 = [r["tg_ncd2"] for r in kept]
    med3 = float(np.median(t3)) if kept else math.nan
    med2 = float(np.median(t2)) if kept else math.nan
    wins, m, p = sign_test(t3, t2, "less")
    _, _, p2 = sign_test(t3, t2, "two-sided")
    passed = bool(kept) and med3 <= med2 and p <= p_max
    return AdvantageResult(rows, med3, med2, wins, m, p, p2, excluded, passed)


def _with_constants(problem, constants):
    clone = copy.copy(problem)
    clone.constants = constants
    return clone


def epoch_bound_experiment(problem, epochs: int, rng: np.random.Generator, B: Optional[int] = None,
                           b: int = 1, eta: Optional[float] = None, start_radius: float = 1.5):
    """Independent SCSG epochs from random starts, checked against the one-epoch bound.

    Epoch lengths above the hard cap are redrawn so the recorded sample
    follows the uncapped geometric law.
    """
    constants = problem.constants
    if B is None:
        B = problem.n if isinstance(problem, FiniteSumProblem) else 5068
    config = ScsgConfig.from_constants(constants.L1, B, b)
    if eta is not None:
        config = replace(config, eta=eta)
    f = problem.expected.value
    grad = problem.expected.grad
    rows, samples = [], []
    for e in range(epochs):
        x0 = rng.uniform(-start_radius, start_radius, size=problem.dim)
        redraws = 0
        while True:
            out = scsg_epoch(problem, x0, config, rng=rng)
            if out.T < config.cap:
                break
            redraws += 1
        f0, f1 = f(x0), f(out.x_out)
        gsq = float(np.sum(grad(out.x_out) ** 2))
        rows.append({"epoch": e, "T": out.T, "resampled": redraws, "f_start": f0, "f_end": f1,
                     "grad_sq_end": gsq})
        samples.append((f0, f1, gsq))
    report = epoch_progress_check(samples, config, constants, n=problem.n)
    return rows, report, config


# ---------------------------------------------------------------------------
# Runner


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    summary: dict
    exit_code: int
    paths: dict = field(default_factory=dict)


def _targets_dict(t: Targets) -> dict:
    return {"eps": t.eps, "eps_H": t.eps_H, "delta": t.delta, "delta0": t.delta0}


def _run_rows(cfg: ExperimentConfig):
    problem = cfg.problem.build()
    rows, checks, extra = [], {}, {}
    aborted = 0

    if cfg.kind == "check":
        for seed in cfg.seeds:
            for r in check_experiment(problem, cfg.points, make_rng(seed), cfg.tol):
                rows.append({"seed": seed, **r})
        checks["derivatives"] = all(r["passed"] for r in rows)
        extra["max_grad_error"] = max(r["grad_error"] for r in rows)
        extra["max_hvp_error"] = max(r["hvp_error"] for r in rows)

    elif cfg.kind == "escape":
        if len(cfg.seeds) != 1:
            raise ConfigurationError("escape experiments take a single seed")
        seed = cfg.seeds[0]
        x = resolve_x0(cfg.x0, problem)
        st = decrement_experiment(problem, x, cfg.targets, cfg.trials, make_rng(seed), nc_config=cfg.flash.nc)
        rows.extend({"seed": seed, **r} for r in st.rows)
        extra.update({"trials": st.trials, "mean_decrement": st.mean_decrement, "stderr": st.stderr,
                      "realised_mean": st.realised_mean, "bound": st.bound,
                      "unconditional_mean": st.unconditional_mean, "unconditional_bound": st.unconditional_bound,
                      "ncd2_mean": st.ncd2_mean, "ratio": st.ratio, "nc_success_rate": st.nc_success_rate,
                      "nc_success_lower99": st.nc_success_lower, "excluded": st.excluded})
        checks["decrement_bound"] = st.passed
        checks["unconditional_bound"] = st.unconditional_passed
        checks["ncd2_ratio"] = bool(st.ratio >= cfg.ratio_min)
        checks["nc_success"] = bool(st.nc_success_lower >= 1.0 - cfg.nc_delta)

    elif cfg.kind == "run" and cfg.algorithm == "scsg":
        sc = cfg.scsg
        for seed in cfg.seeds:
            ep_rows, report, config = epoch_bound_experiment(problem, int(sc.get("epochs", 100)), make_rng(seed),
                                                             B=sc.get("B") or _scsg_B(problem, cfg),
                                                             b=int(sc.get("b", 1)), eta=sc.get("eta"))
            rows.extend({"seed": seed, **r} for r in ep_rows)
            checks[f"epoch_bound[{seed}]"] = bool(report.passed)
            extra[f"report[{seed}]"] = {"B": config.B, "b": config.b, "eta": config.eta,
                                        "mean_grad_sq": report.mean_grad_sq, "rhs": report.rhs,
                                        "slack": report.slack, "asserted": report.asserted,
                                        "reason": report.reason}

    elif cfg.kind == "run":
        driver = "finite-sum" if cfg.algorithm == "flash-fs" else "stochastic"
        tg = th = 0
        successes = 0
        for seed in cfg.seeds:
            x0 = resolve_x0(cfg.x0, problem, seed)
            out = run_flash(problem, driver, x0, cfg.targets, cfg.flash, seed)
            if out.record is None:
                aborted += 1
                rows.append({"seed": seed, "phase_counts": "", "tg_total": -1, "th_total": -1,
                             "f_final": math.nan, "grad_norm_final": math.nan, "lambda_min_final": math.nan,
                             "certified": False, "termination": "aborted"})
                continue
            rec, cert = out.record, out.certificate
            if rec.termination == "nc-inconclusive":
                aborted += 1
            successes += out.success
            tg += rec.tg_total
            th += rec.th_total
            rows.append({"seed": seed, "phase_counts": phase_counts_text(rec.phase_counts),
                         "tg_total": rec.tg_total, "th_total": rec.th_total, "f_final": out.f_final,
                         "grad_norm_final": cert.grad_norm, "lambda_min_final": cert.lambda_min,
                         "certified": cert.passed, "termination": rec.termination})
        rate = successes / len(cfg.seeds)
        tgs = [r["tg_total"] for r in rows if r["tg_total"] >= 0]
        extra.update({"success_rate": rate, "tg_total": tg, "th_total": th,
                      "median_tg": float(np.median(tgs)) if tgs else math.nan})
        checks["success_rate"] = rate >= cfg.min_success

    elif cfg.kind == "bench":
        x0 = resolve_x0(cfg.x0, problem)
        res = eval_advantage_experiment(problem, x0, cfg.targets, cfg.seeds, cfg.flash, cfg.p_max)
        rows.extend(res.rows)
        extra.update({"median_tg_ncd3": res.median_ncd3, "median_tg_ncd2": res.median_ncd2,
                      "wins": res.wins, "informative_pairs": res.informative, "p_value": res.p_value,
                      "p_two_sided": res.p_two_sided, "excluded_seeds": res.excluded})
        checks["eval_advantage"] = res.passed

    elif cfg.kind == "certify":
        if cfg.point_file is None:
            raise ConfigurationError("certify needs a point file (certify.point or --point)")
        x = load_point(cfg.point_file)
        cert = certify_sosp(problem, x, cfg.targets)
        rows.append({"seed": cfg.seeds[0], "grad_norm": cert.grad_norm, "lambda_min": cert.lambda_min,
                     "pass_first_order": cert.pass_first_order, "pass_second_order": cert.pass_second_order,
                     "pass": cert.passed})
        extra["certificate"] = cert.to_dict()
        checks["certified"] = cert.passed

    return rows, checks, extra, aborted


def _scsg_B(problem, cfg):
    if isinstance(problem, FiniteSumProblem):
        return problem.n
    return stochastic_batch_size(problem.constants, cfg.targets.resolve(problem.constants))


def table_kind(cfg: ExperimentConfig) -> str:
    if cfg.kind == "run" and cfg.algorithm == "scsg":
        return "scsg"
    return cfg.kind


def render_rows(cfg: ExperimentConfig, rows: list, fmt: str) -> str:
    columns = CSV_COLUMNS[table_kind(cfg)]
    full = [{"experiment": cfg.name, **r} for r in rows]
    order = [c for c in ("trial", "point", "epoch") if c in columns]
    full.sort(key=lambda r: (r["experiment"], r["seed"], *[r[c] for c in order],
                             r.get("variant", "")))
    if fmt == "json":
        return dumps_json([{c: r.get(c) for c in columns} for r in full])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in full:
        writer.writerow([format_value(r.get(c)) for c in columns])
    return buf.getvalue()


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Execute the seed matrix, write artifacts and return the summary.

    Seed cells are independent (each owns its generator), so rows are sorted
    by ``(experiment, seed)`` before writing and the output does not depend
    on execution order.
    """
    if not cfg.seeds:
        raise ConfigurationError("no seeds")
    rows, checks, extra, aborted = _run_rows(cfg)
    all_pass = all(checks.values()) and aborted == 0
    summary = {
        "experiment": cfg.name,
        "kind": cfg.kind,
        "algorithm": cfg.algorithm if cfg.kind == "run" else "",
        "problem": {"name": cfg.problem.name, "d": cfg.problem.d,
                    "n": cfg.problem.n if cfg.problem.n is not None else "stochastic",
                    "seed": cfg.problem.seed},
        "targets": _targets_dict(cfg.targets),
        "seeds": list(cfg.seeds),
        "rows": len(rows),
        "aborted": aborted,
        **extra,
        "checks": checks,
        "pass": all_pass,
    }
    result = ExperimentResult(cfg, rows, summary, 0 if all_pass else 1)
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = out / f"{cfg.name}.{cfg.fmt}"
        table.write_text(render_rows(cfg, rows, cfg.fmt))
        summ = out / f"{cfg.name}.summary.json"
        summ.write_text(dumps_json(summary))
        result.paths = {"table": str(table), "summary": str(summ)}
    return result
