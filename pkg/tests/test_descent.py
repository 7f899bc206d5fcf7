import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import planted
from flashopt.descent import (
    Moved,
    admissible_delta,
    descent_step,
    expected_decrement_bound,
    ncd2_baseline_step,
    ncd2_step_size,
    ncd3_step,
    ncd3_step_size,
    unconditional_decrement_bound,
)
from flashopt.flash import Targets
from flashopt.harness import binomial_lower_bound
from flashopt.negcurve import BOT, Direction, make_nc_finder
from flashopt.oracle import ConfigurationError, ContractViolation, SmoothnessConstants, make_test_problem
from flashopt.rng import make_rng

QUARTIC = SmoothnessConstants(11.0, 12.0, 6.0)


def fixed_direction(v, rho=-1.0):
    v = np.asarray(v, dtype=float)
    out = Direction(v / np.linalg.norm(v), rho)
    return lambda x, rng, counters=None: out


def test_step_sizes():
    t = Targets(0.1, 0.5)
    assert ncd3_step_size(QUARTIC, t) == pytest.approx(0.5, abs=1e-15)
    assert ncd2_step_size(QUARTIC, t) == pytest.approx(0.5 / 12, abs=1e-15)


def test_decrement_bounds():
    t = Targets(0.1, 0.5, delta=0.001)
    assert expected_decrement_bound(QUARTIC, t) == pytest.approx(0.015625, abs=1e-15)
    assert expected_decrement_bound(SmoothnessConstants(1.0, 1.0, 1.0), Targets(0.1, 0.1)) == pytest.approx(0.00375)
    assert unconditional_decrement_bound(QUARTIC, t) == pytest.approx(0.25 / 48, abs=1e-15)
    assert unconditional_decrement_bound(QUARTIC, t) * 3 == pytest.approx(expected_decrement_bound(QUARTIC, t))
    assert admissible_delta(QUARTIC, 0.5) == pytest.approx(0.5 / 97.5)


def test_delta_warning(caplog):
    with caplog.at_level(logging.WARNING, logger="flashopt.descent"):
        unconditional_decrement_bound(QUARTIC, Targets(0.1, 0.5, delta=0.05))
    assert "admissible" in caplog.text


def test_one_dimensional_quartic_both_signs():
    p = make_test_problem("separable-quartic", 1, 1, sigma=0.0)
    nc = fixed_direction([1.0])
    signs = set()
    for seed in range(20):
        out = ncd3_step(p, np.zeros(1), QUARTIC, Targets(0.1, 0.5), nc, make_rng(seed))
        signs.add(out.sign)
        assert out.f_after - out.f_before == pytest.approx(0.5**4 / 4 - 0.5**2 / 2, abs=1e-15)
    assert signs == {-1, 1}


def test_positive_definite_is_bot():
    p = make_test_problem("separable-quartic", 3, 4, sigma=0.0)
    x = np.ones(3)
    nc = make_nc_finder(p, p.constants, Targets(0.1, 0.5, 0.05))
    assert ncd3_step(p, x, p.constants, Targets(0.1, 0.5, 0.05), nc, make_rng(0)) is BOT
    assert ncd2_baseline_step(p, x, p.constants, Targets(0.1, 0.5, 0.05), nc, make_rng(0)) is BOT


def test_moved_exactness():
    p = make_test_problem("separable-quartic", 5, 10, seed=1)
    nc = fixed_direction([1.0, 2.0, 0.0, -1.0, 0.5])
    x = np.full(5, 0.1)
    out = ncd3_step(p, x, QUARTIC, Targets(0.1, 0.5), nc, make_rng(2))
    assert isinstance(out, Moved)
    assert np.array_equal(out.y, x + out.sign * out.step_size * out.direction)
    assert abs(np.linalg.norm(out.y - x) - 0.5) <= 1e-10
    base = ncd2_baseline_step(p, x, QUARTIC, Targets(0.1, 0.5), nc, make_rng(2))
    assert abs(np.linalg.norm(base.y - x) - 0.5 / 12) <= 1e-10


def test_argmin_picks_better_sign():
    # a cubic term makes the two signs unequal
    p = make_test_problem("rayleigh-cubic", 3, 2, seed=0, sigma=0.0, mu=1.0)
    u = p.objective.u
    nc = fixed_direction(u)
    t = Targets(0.1, 0.5)
    out = ncd3_step(p, np.zeros(3), p.constants, t, nc, make_rng(0), sign_rule="argmin")
    eta = out.step_size
    f = p.expected.value
    best = min(f(eta * u), f(-eta * u))
    assert out.f_after == pytest.approx(best, abs=1e-15)
    with pytest.raises(ConfigurationError):
        ncd3_step(p, np.zeros(3), p.constants, t, nc, make_rng(0), sign_rule="coin")


def test_left_domain_flag():
    p = make_test_problem("separable-quartic", 2, 2)
    nc = fixed_direction([1.0, 0.0])
    out = ncd3_step(p, np.array([1.9, 0.0]), SmoothnessConstants(11.0, 12.0, 0.1), Targets(0.1, 0.5), nc,
                    make_rng(0))
    # a step of length sqrt(15) leaves the box whichever sign is drawn
    assert out.left_domain


def test_input_contracts():
    p = make_test_problem("separable-quartic", 2, 2)
    nc = fixed_direction([1.0, 0.0])
    with pytest.raises(ContractViolation):
        ncd3_step(p, np.array([np.nan, 0.0]), QUARTIC, Targets(0.1, 0.5), nc, make_rng(0))
    with pytest.raises(ConfigurationError):
        descent_step("ncd4", p, np.zeros(2), QUARTIC, Targets(0.1, 0.5), nc, make_rng(0))


def test_rademacher_balance():
    p = make_test_problem("separable-quartic", 2, 2)
    nc = fixed_direction([1.0, 1.0])
    rng = make_rng(77)
    N = 2000
    plus = sum(ncd3_step(p, np.zeros(2), QUARTIC, Targets(0.1, 0.5), nc, rng).sign == 1 for _ in range(N))
    # two-sided 99% band around N / 2
    assert binomial_lower_bound(plus, N, 0.995) <= 0.5 <= 1 - binomial_lower_bound(N - plus, N, 0.995)


@given(arrays(np.float64, 10, elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_zeta_averaged_decrement_closed_form(v):
    # at the quartic saddle with eta = 0.5: E_zeta decrement = eta^2/2 - eta^4/4 * sum v^4
    p = make_test_problem("separable-quartic", 10, 1, sigma=0.0)
    v = v / np.linalg.norm(v)
    f = p.expected.value
    eta = 0.5
    zeta_mean = f(np.zeros(10)) - 0.5 * (f(eta * v) + f(-eta * v))
    assert zeta_mean == pytest.approx(0.125 - 0.015625 * np.sum(v**4), abs=1e-14)
    assert zeta_mean >= 0.015625 - 1e-8


@pytest.mark.parametrize("name", ["separable-quartic", "coupled-saddle", "rayleigh-cubic"])
def test_taylor_bound(name):
    p = make_test_problem(name, 6, 1, seed=3, sigma=0.0)
    obj, L3 = p.objective, p.constants.L3
    rng = make_rng(11)
    for _ in range(1000):
        x = p.domain.sample(rng, 6)
        y = p.domain.sample(rng, 6)
        h = y - x
        model = (obj.value(x) + obj.grad(x) @ h + 0.5 * h @ obj.hvp(x, h)
                 + obj.third_directional(x, h) / 6.0 + L3 / 24.0 * np.linalg.norm(h) ** 4)
        assert obj.value(y) <= model + 1e-10 * max(1.0, abs(model))


def test_degenerate_l3_matches_ncd2_step():
    t = Targets(0.1, 0.5)
    c = SmoothnessConstants(11.0, 12.0, 3 * 12.0**2 / 0.5)
    assert ncd3_step_size(c, t) == pytest.approx(ncd2_step_size(c, t))
    assert math.isclose(ncd3_step_size(c, t), 0.5 / 12)
