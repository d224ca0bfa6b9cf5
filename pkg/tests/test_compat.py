import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_hum.compat import (build_bump, check_compat_1d, required_orders,
                                verify_Hk_stability)
from cascade_hum.descriptors import Bump, Callback, Constant, Cosine, Linear, Sampled
from cascade_hum.errors import CannotEvaluate, InvalidArgument, Unsupported

from conftest import L

GRID = np.linspace(0, L, 2001)


def test_required_orders():
    assert required_orders(0) == required_orders(2) == []
    assert required_orders(3) == [1]
    assert required_orders(6) == [1, 3]


def test_constant_passes_every_level():
    for k in range(8):
        assert check_compat_1d(Constant(2.0), k, L).passed


def test_linear_fails_at_three():
    assert check_compat_1d(Linear(1.0, 0.0), 2, L).passed
    rep = check_compat_1d(Linear(1.0, 0.0), 3, L)
    assert not rep.passed
    assert [e["value"] for e in rep.entries] == [1.0, 1.0]


def test_bump_passes_to_six():
    assert check_compat_1d(build_bump((1.0, 2.0), L), 6, L).passed


@pytest.mark.parametrize("c, expect", [
    (Sampled(GRID, np.cos(GRID)), True),
    (Sampled(GRID, np.sin(GRID)), False),
    (Callback(np.cos), True),
    (Callback(lambda x: x**2), False),
])
def test_numerical_derivatives(c, expect):
    assert check_compat_1d(c, 3, L).passed is expect


def test_coarse_samples_cannot_decide():
    x = np.linspace(0, L, 5)
    with pytest.raises(CannotEvaluate):
        check_compat_1d(Sampled(x, np.cos(x)), 3, L)


def test_negative_level_rejected():
    with pytest.raises(InvalidArgument):
        check_compat_1d(Constant(1.0), -1, L)
    with pytest.raises(InvalidArgument):
        verify_Hk_stability(Constant(1.0), -1, [8], L)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 1.4), st.floats(0.1, 1.4), st.floats(0.2, 3.0))
def test_build_bump_shape(a, width, amp):
    b = min(a + width, L - 0.1)
    c = build_bump((a, b), L, amplitude=amp)
    inside = np.linspace(a, b, 50)
    assert c(inside).min() >= 0.5 * amp
    lo, hi = c.support
    assert 0 < lo and hi < L
    outside = np.concatenate([np.linspace(0, lo, 20), np.linspace(hi, L, 20)])
    assert np.abs(c(outside)).max() <= 1e-12 * amp
    assert c(GRID).min() >= 0


def test_build_bump_rejections():
    with pytest.raises(Unsupported):
        build_bump((0.0, 1.0), L)
    with pytest.raises(Unsupported):
        build_bump((1.0, L), L)
    with pytest.raises(InvalidArgument):
        build_bump((2.0, 1.0), L)
    with pytest.raises(InvalidArgument):
        build_bump((1.0, 2.0), L, delta=1.5)


def test_compat_monotone_in_level():
    # failing at k means failing at every larger level
    for c in (Linear(1.0, 0.0), Cosine(1.0, 0.5, 1.0), Cosine(1.0, 0.5, 2.0), build_bump((1, 2), L)):
        verdicts = [check_compat_1d(c, k, L).passed for k in range(8)]
        first_fail = verdicts.index(False) if False in verdicts else len(verdicts)
        assert not any(verdicts[first_fail:])


def test_level_zero_bounded_by_sup():
    c = Cosine(1.0, 0.5, 2.0)
    rep = verify_Hk_stability(c, 0, [16, 32, 64], L)
    assert rep.stable
    assert max(rep.operator_norms) <= 1.5 + 1e-9
    assert max(rep.estimates) <= max(rep.operator_norms) + 1e-12


def test_compatible_coefficient_is_stable():
    rep = verify_Hk_stability(Cosine(1.0, 0.5, 2.0), 4, [16, 32, 64], L)
    assert rep.stable
    assert np.ptp(rep.operator_norms) <= 1e-8 * rep.operator_norms[0]
    assert rep.to_json()["verdict"] == "stable"


def test_incompatible_operator_norm_grows():
    rep = verify_Hk_stability(Linear(1.0, 0.0), 3, [16, 32, 64], L)
    assert np.all(np.diff(rep.operator_norms) > 0)


def test_stability_report_is_deterministic():
    a = verify_Hk_stability(Bump(1.0, 2.0, 1.0, 0.5), 2, [16, 32], L, seed=3)
    b = verify_Hk_stability(Bump(1.0, 2.0, 1.0, 0.5), 2, [16, 32], L, seed=3)
    assert a.to_json() == b.to_json()
