"""Counterterm running, calibration, and limit-cycle tracing.

Frozen oracles: the boundary-condition value C(Lambda_*) = -lam/Lambda_***(2l+1),
the tangent period factor exp(pi/nu), the analytic pole position from
nu*ln(Lambda/Lambda_*) = arctan(-(2l+1)/(2 nu)), and the contact-only bubble
inversion k = p C / (1 + C (Lambda + p**2 L)).
"""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from singular_eft.model import CountertermSet, ModelParams, nu_l
from singular_eft.renorm import (
    BranchExhaustedError,
    RGTrajectory,
    analytic_c0,
    calibrate_c0,
    trace_limit_cycle,
)
from singular_eft.solver import PoleError, build_grid, solve_k

P_WAVE = ModelParams(lam=4.25, l=1)
S_WAVE = ModelParams(lam=2.0, l=0)


# ---------------------------------------------------------------- analytic


def test_analytic_boundary_condition():
    # at Lambda = Lambda_* the tangent vanishes and C = -lam/Lambda**(2l+1)
    assert analytic_c0(P_WAVE, 0.2, 0.2) == pytest.approx(-531.25, rel=1e-12)
    assert analytic_c0(S_WAVE, 0.7, 0.7) == pytest.approx(-2.0 / 0.7, rel=1e-12)


def test_analytic_period():
    # reduced coupling repeats when ln(Lambda) advances by pi/nu
    period = 10.749087029163503  # exp(pi/nu) for lam=2, l=0
    c1 = analytic_c0(S_WAVE, 3.0, 0.7)
    c2 = analytic_c0(S_WAVE, 3.0 * period, 0.7)
    assert 3.0 * c1 == pytest.approx(3.0 * period * c2, rel=1e-9)


def test_analytic_pole_raises():
    with pytest.raises(PoleError):
        analytic_c0(P_WAVE, 0.11240941850626929, 0.2)


def test_analytic_nonsingular_raises():
    with pytest.raises(ValueError):
        analytic_c0(ModelParams(lam=0.2, l=0), 1.0, 0.5)
    with pytest.raises(ValueError):
        analytic_c0(ModelParams(lam=2.0, l=1), 1.0, 0.5)


@settings(max_examples=30, deadline=None)
@given(
    lam=st.floats(2.6, 20.0),
    cutoff=st.floats(0.5, 50.0),
    ratio=st.floats(0.2, 5.0),
)
def test_analytic_period_property(lam, cutoff, ratio):
    params = ModelParams(lam=lam, l=0)
    nu = nu_l(params).value
    lambda_star = cutoff * ratio
    # stay away from the tangent pole so both points are well conditioned
    theta = nu * math.log(cutoff / lambda_star)
    assume(abs(math.tan(theta)) < 5.0)
    c1 = analytic_c0(params, cutoff, lambda_star)
    c2 = analytic_c0(params, cutoff * math.exp(math.pi / nu), lambda_star)
    y1 = cutoff * c1
    y2 = cutoff * math.exp(math.pi / nu) * c2
    assert y1 == pytest.approx(y2, rel=1e-8, abs=1e-10)


# ---------------------------------------------------------------- calibration


def test_calibrate_contact_only_roundtrip():
    # lam=0 leaves the closed-form bubble sum; k_d below was evaluated from
    # k = p C / (1 + C (Lambda + p**2 L)) at C=0.7, Lambda=5, p=0.3
    params = ModelParams(lam=0.0, l=0)
    k_d = 0.0467978582510894
    c = calibrate_c0(params, 5.0, datum=(0.3, k_d))
    assert c == pytest.approx(0.7, rel=1e-8)


def test_calibrate_reproduces_datum():
    for cutoff in (5.5, 6.5, 7.5, 8.5):
        c = calibrate_c0(S_WAVE, cutoff, datum=(0.1, -1.05))
        assert math.isfinite(c)
        grid = build_grid(cutoff, 0.1)
        sol = solve_k(S_WAVE, CountertermSet(cutoff=cutoff, c_lo=c), 0.1, grid)
        assert sol.onshell_value == pytest.approx(-1.05, abs=1e-9)


def test_calibrate_recovers_analytic_counterterm():
    cutoff = 100.0
    c_ana = analytic_c0(P_WAVE, cutoff, 0.2)
    grid = build_grid(cutoff, 0.02)
    k_d = solve_k(P_WAVE, CountertermSet(cutoff=cutoff, c_lo=c_ana), 0.02, grid).onshell_value
    c_fit = calibrate_c0(P_WAVE, cutoff, datum=(0.02, k_d))
    assert c_fit == pytest.approx(c_ana, rel=1e-6)


def test_calibrate_seed_independent_root():
    # the datum equation has a single root in C at fixed cutoff, so wildly
    # different seeds must agree
    k_d = -0.3
    roots = [calibrate_c0(S_WAVE, 6.0, datum=(0.1, k_d), seed=s) for s in (-5.0, 0.0, 2.0)]
    assert roots[0] == pytest.approx(roots[1], rel=1e-9)
    assert roots[1] == pytest.approx(roots[2], rel=1e-9)


def test_calibrate_unreachable_datum():
    # contact-only k(C) = p C / (1 + C J) saturates at p/J as C -> inf;
    # a datum at the asymptote has no root at any finite coupling
    params = ModelParams(lam=0.0, l=0)
    p, cutoff = 0.3, 5.0
    j = cutoff + p * p * (0.5 / p) * math.log((cutoff - p) / (cutoff + p))
    with pytest.raises(BranchExhaustedError):
        calibrate_c0(params, cutoff, datum=(p, p / j))


def test_calibrate_domain():
    with pytest.raises(ValueError):
        calibrate_c0(S_WAVE, 5.0, datum=(0.6, -1.0))  # p_d too close to cutoff
    with pytest.raises(ValueError):
        calibrate_c0(S_WAVE, 5.0, datum=(0.1, math.inf))


# ---------------------------------------------------------------- tracing

TRACE_RANGE = (2.0, 200.0)
LAMBDA_STAR = 0.2


@pytest.fixture(scope="module")
def traced():
    cutoff_ref = 100.0
    c_ana = analytic_c0(P_WAVE, cutoff_ref, LAMBDA_STAR)
    grid = build_grid(cutoff_ref, 0.02)
    k_d = solve_k(
        P_WAVE, CountertermSet(cutoff=cutoff_ref, c_lo=c_ana), 0.02, grid
    ).onshell_value
    return trace_limit_cycle(
        P_WAVE, datum=(0.02, k_d), cutoff_range=TRACE_RANGE, samples_per_decade=16
    )


def test_trace_shape(traced):
    assert isinstance(traced, RGTrajectory)
    assert np.all(np.diff(traced.cutoffs) > 0)
    assert traced.cutoffs.size == traced.couplings.size
    assert traced.cutoffs[0] >= TRACE_RANGE[0] and traced.cutoffs[-1] <= TRACE_RANGE[1]
    assert isinstance(traced.branch_id, int)


def test_trace_pole_positions_and_spacing(traced):
    # analytic poles of the running: Lambda_* exp((arctan(-(2l+1)/(2 nu)) + k pi)/nu)
    nu = math.sqrt(2.0)
    base = math.atan(-3.0 / (2.0 * nu))
    expected = [
        LAMBDA_STAR * math.exp((base + k * math.pi) / nu) for k in range(1, 4)
    ]
    inside = [x for x in expected if TRACE_RANGE[0] < x < TRACE_RANGE[1]]
    assert len(traced.poles) == len(inside) == 2
    for found, want in zip(traced.poles, inside):
        assert found == pytest.approx(want, rel=1e-3)
    spacing = math.log(traced.poles[1] / traced.poles[0])
    assert spacing == pytest.approx(math.pi / nu, rel=1e-2)


def test_trace_matches_analytic_running(traced):
    lam = P_WAVE.lam
    y_num = traced.cutoffs**3 * traced.couplings
    y_ana = np.array(
        [c**3 * analytic_c0(P_WAVE, c, LAMBDA_STAR) for c in traced.cutoffs]
    )
    mask = np.abs(y_ana) < 20.0 * lam  # away from poles
    assert np.count_nonzero(mask) > 20
    rel = np.abs(y_num[mask] - y_ana[mask]) / np.maximum(np.abs(y_ana[mask]), lam)
    assert np.max(rel) < 0.01


def test_trace_reduced_coupling_monotone_between_poles(traced):
    y = traced.cutoffs**3 * traced.couplings
    edges = [TRACE_RANGE[0]] + list(traced.poles) + [TRACE_RANGE[1]]
    for lo, hi in zip(edges[:-1], edges[1:]):
        seg = (traced.cutoffs > lo) & (traced.cutoffs < hi)
        assert np.all(np.diff(y[seg]) > 0)


def test_trace_lambda_star(traced):
    # the fitted scale is defined modulo the cycle period
    nu = math.sqrt(2.0)
    d = nu * (math.log(traced.lambda_star) - math.log(LAMBDA_STAR)) / math.pi
    assert abs(d - round(d)) * math.pi / nu < 1e-3


def test_trace_beta_function():
    # dedicated pole-free branch with a fine ladder so the five-point stencil
    # resolves Lambda dC/dLambda = (lam - y)**2 / ((2l+1) Lambda**(2l+1))
    cutoff_ref = 30.0
    c_ana = analytic_c0(P_WAVE, cutoff_ref, LAMBDA_STAR)
    grid = build_grid(cutoff_ref, 0.02)
    k_d = solve_k(
        P_WAVE, CountertermSet(cutoff=cutoff_ref, c_lo=c_ana), 0.02, grid
    ).onshell_value
    traj = trace_limit_cycle(
        P_WAVE, datum=(0.02, k_d), cutoff_range=(13.0, 60.0), samples_per_decade=64
    )
    assert not traj.poles
    ln = np.log(traj.cutoffs)
    h = ln[1] - ln[0]
    assert np.allclose(np.diff(ln), h, rtol=1e-9)
    c = traj.couplings
    fd = (-c[4:] + 8.0 * c[3:-1] - 8.0 * c[1:-3] + c[:-4]) / (12.0 * h)
    lam, n = P_WAVE.lam, 3
    cut = traj.cutoffs[2:-2]
    y = cut**n * c[2:-2]
    beta = (lam - y) ** 2 / (n * cut**n)
    scale = lam**2 / (n * cut**n)
    mask = np.abs(beta) > 0.01 * scale
    assert np.count_nonzero(mask) > 20
    rel = np.abs(fd[mask] - beta[mask]) / np.abs(beta[mask])
    assert np.max(rel) < 0.01


def test_trace_rejects_nonsingular():
    with pytest.raises(ValueError):
        trace_limit_cycle(
            ModelParams(lam=0.2, l=0),
            datum=(0.1, -1.0),
            cutoff_range=(2.0, 20.0),
            samples_per_decade=8,
        )
