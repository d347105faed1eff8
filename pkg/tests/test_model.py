import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_eft.model import (
    CountertermSet,
    ModelParams,
    critical_l,
    nu_l,
    perturbative_l,
    v_contact_lo,
    v_contact_nlo,
    v_lo_partial,
    v_nlo_partial,
)

PI2 = math.pi**2

momenta = st.floats(min_value=1e-3, max_value=1e3)
strengths = st.floats(min_value=-30.0, max_value=30.0)
waves = st.integers(min_value=0, max_value=4)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(lam=1.0, reduced_mass=0.0)
    with pytest.raises(ValueError):
        ModelParams(lam=1.0, g=1.0, big_m=0.0)
    with pytest.raises(ValueError):
        ModelParams(lam=1.0, l=-1)
    # big_m irrelevant while g = 0
    ModelParams(lam=1.0, g=0.0, big_m=0.0)


def test_counterterms_validation():
    with pytest.raises(ValueError):
        CountertermSet(cutoff=-1.0)
    cts = CountertermSet(cutoff=5.0, c_lo=0.3)
    assert cts.c_nlo == 0.0 and cts.d_nlo == 0.0


def test_v_lo_hand_values():
    # s wave, equal momenta: -pi^2 lam / m
    p = ModelParams(lam=2.0, l=0)
    assert v_lo_partial(p, 1.0, 1.0) == pytest.approx(-2 * PI2, rel=1e-12)
    # p wave: -pi^2 lam/(3 m) * p_< / p_>^2
    p = ModelParams(lam=4.25, l=1)
    assert v_lo_partial(p, 2.0, 1.0) == pytest.approx(-PI2 * 4.25 / 12, rel=1e-12)


def test_v_lo_rejects_nonpositive_momenta():
    p = ModelParams(lam=1.0)
    for bad in [(0.0, 1.0), (1.0, -2.0)]:
        with pytest.raises(ValueError):
            v_lo_partial(p, *bad)


def test_v_nlo_hand_value():
    # l=0: (2l+1)(2l-1) = -1 flips the overall sign; bracket becomes 1 + p_<^2/(3 p_>^2)
    p = ModelParams(lam=2.0, g=1.0, big_m=0.5, l=0)
    expect = 2 * PI2 * 0.1 * (4.0 / 3.0)
    assert v_nlo_partial(p, 0.1, 0.1) == pytest.approx(expect, rel=1e-12)


def test_v_nlo_vanishes_without_coupling():
    p = ModelParams(lam=2.0, g=0.0, l=1)
    q = np.geomspace(0.01, 10.0, 7)
    assert np.all(v_nlo_partial(p, q[:, None], q[None, :]) == 0.0)


def test_v_contact_lo_hand_values():
    p0 = ModelParams(lam=0.0, l=0)
    assert v_contact_lo(p0, 1.0, 0.3, 7.0) == pytest.approx(PI2)
    assert v_contact_lo(p0, 0.0, 1.0, 1.0) == 0.0
    p1 = ModelParams(lam=0.0, l=1)
    assert v_contact_lo(p1, 3.0, 2.0, 0.5) == pytest.approx(PI2)


def test_v_contact_nlo_hand_values():
    p = ModelParams(lam=0.0, l=0)
    assert v_contact_nlo(p, 0.0, 0.0, 0.2, 0.4) == 0.0
    assert v_contact_nlo(p, 1.0, 0.0, 0.2, 0.4) == pytest.approx(PI2)
    assert v_contact_nlo(p, 0.0, 1.0, 0.5, 0.5) == pytest.approx(PI2 * 0.5)


def test_v_contact_nlo_rejects_higher_waves():
    p = ModelParams(lam=0.0, l=1)
    with pytest.raises(ValueError):
        v_contact_nlo(p, 1.0, 0.0, 1.0, 1.0)


@given(momenta, momenta, strengths, waves)
@settings(max_examples=60, deadline=None)
def test_potentials_symmetric(pa, pb, lam, l):
    params = ModelParams(lam=lam, g=lam, big_m=0.5, l=l)
    assert v_lo_partial(params, pa, pb) == v_lo_partial(params, pb, pa)
    assert v_nlo_partial(params, pa, pb) == v_nlo_partial(params, pb, pa)
    assert v_contact_lo(params, 1.7, pa, pb) == v_contact_lo(params, 1.7, pb, pa)


@given(momenta, momenta, strengths, waves)
@settings(max_examples=60, deadline=None)
def test_long_range_pieces_linear_in_couplings(pa, pb, s, l):
    base = ModelParams(lam=1.0, g=1.0, big_m=0.5, l=l)
    scaled = ModelParams(lam=s, g=s, big_m=0.5, l=l)
    assert v_lo_partial(scaled, pa, pb) == pytest.approx(
        s * v_lo_partial(base, pa, pb), rel=1e-13, abs=1e-300
    )
    assert v_nlo_partial(scaled, pa, pb) == pytest.approx(
        s * v_nlo_partial(base, pa, pb), rel=1e-13, abs=1e-300
    )


@given(momenta, st.floats(min_value=0.1, max_value=10.0), waves)
@settings(max_examples=40, deadline=None)
def test_contact_lo_depends_only_on_momentum_product(pa, ratio, l):
    params = ModelParams(lam=0.0, l=l)
    pb = 0.37
    a = v_contact_lo(params, 2.0, pa, pb)
    b = v_contact_lo(params, 2.0, pa * ratio, pb / ratio)
    assert a == pytest.approx(b, rel=1e-10)


def test_nu_l_values():
    val, singular = nu_l(ModelParams(lam=4.25, l=1))
    assert singular and val == pytest.approx(math.sqrt(2.0), rel=1e-14)
    val, singular = nu_l(ModelParams(lam=0.25, l=0))
    assert singular and val == 0.0
    val, singular = nu_l(ModelParams(lam=2.0, l=1))
    assert not singular
    assert val == pytest.approx(0.5, rel=1e-14)


def test_wave_thresholds():
    assert critical_l(ModelParams(lam=4.25)) == pytest.approx(math.sqrt(4.25) - 0.5)
    assert perturbative_l(ModelParams(lam=4.25)) == pytest.approx(4.25 * math.pi / 4 - 0.5)
    assert critical_l(ModelParams(lam=2.0)) == pytest.approx(math.sqrt(2.0) - 0.5)
    assert critical_l(ModelParams(lam=0.25)) == pytest.approx(0.0, abs=1e-15)


@given(st.floats(min_value=0.01, max_value=30.0), waves)
@settings(max_examples=80, deadline=None)
def test_singularity_classification_matches_threshold(lam, l):
    params = ModelParams(lam=lam, l=l)
    _, singular = nu_l(params)
    # boundary lam = (l+1/2)^2 counts as singular on both sides of the comparison
    assert singular == (l < critical_l(params) or lam == (l + 0.5) ** 2)


def test_potentials_broadcast_over_grids():
    params = ModelParams(lam=4.25, g=1.0, big_m=0.5, l=1)
    q = np.geomspace(0.01, 5.0, 11)
    v = v_lo_partial(params, q[:, None], q[None, :])
    assert v.shape == (11, 11)
    assert np.allclose(v, v.T)
    w = v_nlo_partial(params, q[:, None], q[None, :])
    assert np.allclose(w, w.T)
