import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codescale import (
    CODE_CHINCHILLA,
    CODE_FARSEER,
    ArgumentError,
    ChinchillaLaw,
    EvaluationError,
    FarseerLaw,
    LawHandle,
    LogGrid,
    RunRecord,
    asymptotic_limit,
    eval_slice,
)
from codescale.laws import PATH_DEPENDENT, DIVERGENT, FINITE, ZERO, eval_farseer_naive

VALIDATION_POINTS = [(6.37e9, 127e9), (2.27e9, 341e9), (1.34e9, 567e9)]


def chinchilla_by_hand(law, n, d):
    return law.e_irr + law.coef_a / n**law.exp_a + law.coef_b / d**law.exp_b


def test_chinchilla_matches_formula_at_validation_points():
    for n, d in VALIDATION_POINTS:
        assert CODE_CHINCHILLA.loss(n, d) == pytest.approx(chinchilla_by_hand(CODE_CHINCHILLA, n, d), rel=1e-15)


def test_chinchilla_scalar_and_array():
    out = CODE_CHINCHILLA.loss(np.array([1e9, 2e9]), 1e11)
    assert out.shape == (2,)
    assert isinstance(CODE_CHINCHILLA.loss(1e9, 1e11), float)


def test_farseer_log_space_matches_naive_where_naive_is_safe():
    ns = np.geomspace(1e7, 1e11, 17)
    ds = np.geomspace(1e8, 1e13, 19)
    nn, dd = np.meshgrid(ns, ds)
    fast = CODE_FARSEER.loss(nn, dd)
    slow = eval_farseer_naive(CODE_FARSEER, nn, dd)
    np.testing.assert_allclose(fast, slow, rtol=1e-12)


def test_farseer_small_n_exponent_region_stays_finite():
    # the data-term prefactor exp(B n^b + Q) is large at tiny n; log space keeps it usable
    val = CODE_FARSEER.loss(1, 1e12)
    assert math.isfinite(val) and val > 0


def test_farseer_overflow_raises_with_location():
    law = FarseerLaw(0.0, 0.0, 0.0, 800.0, 0.0, 0.0, -50.0, 0.0, 0.0)
    with pytest.raises(EvaluationError, match="overflows at n=1"):
        law.loss(1, 10)


def test_chinchilla_non_finite_term_named():
    law = ChinchillaLaw(0.1, 1.0, -400.0, 1.0, 0.3)
    with pytest.raises(EvaluationError, match="A/N\\^a"):
        law.loss(1e9, 1e9)


@pytest.mark.parametrize("n,d", [(0, 1e9), (1e9, 0), (-5, 10), (float("nan"), 10)])
def test_counts_below_one_rejected(n, d):
    with pytest.raises(ArgumentError):
        CODE_CHINCHILLA.loss(n, d)


def test_handle_family_mismatch_rejected():
    with pytest.raises(ArgumentError):
        LawHandle("farseer", CODE_CHINCHILLA)
    with pytest.raises(ArgumentError):
        LawHandle("gpt", CODE_CHINCHILLA)


def test_run_record_validation():
    RunRecord(1, 1, 0.5)
    for bad in [dict(n_params=0, d_tokens=1, loss=1.0), dict(n_params=1, d_tokens=1, loss=0.0),
                dict(n_params=1, d_tokens=1, loss=float("inf")), dict(n_params=1, d_tokens=1, loss=1.0, mixture="")]:
        with pytest.raises(ArgumentError):
            RunRecord(**bad)


# ---------------------------------------------------------------------------
# slices


def test_fixed_dn_slice_rounds_tokens():
    out = eval_slice(CODE_CHINCHILLA, "fixed_dn", 20.0, LogGrid(1e8, 1e9, 3))
    for n, loss in out:
        assert loss == pytest.approx(chinchilla_by_hand(CODE_CHINCHILLA, n, round(20 * n)))


def test_fixed_n_ratio_slice_matches_fixed_dn():
    a = eval_slice(CODE_FARSEER, "fixed_n", 1e9, [10.0, 100.0], ratio=True)
    assert a[1][1] == pytest.approx(CODE_FARSEER.loss(1e9, 1e11))


def test_fixed_d_slice_is_decreasing_in_n_for_chinchilla():
    out = eval_slice(CODE_CHINCHILLA, "fixed_d", 1e11, LogGrid(1e7, 1e11, 9))
    losses = [y for _, y in out]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_slice_rejects_bad_axis_and_grid():
    with pytest.raises(ArgumentError):
        eval_slice(CODE_CHINCHILLA, "fixed_x", 1.0, [1.0, 2.0])
    with pytest.raises(ArgumentError):
        eval_slice(CODE_CHINCHILLA, "fixed_n", 1e9, [2e9, 1e9])


# ---------------------------------------------------------------------------
# limits


def test_chinchilla_limit_is_e_irr_exactly():
    res = asymptotic_limit(CODE_CHINCHILLA)
    assert res.kind == FINITE and res.value == 0.2193


def test_farseer_limit_is_exp_of_q():
    res = asymptotic_limit(CODE_FARSEER)
    assert res.kind == FINITE
    assert res.value == pytest.approx(math.exp(-14.0414), rel=1e-12)
    assert res.value == pytest.approx(8.00e-7, rel=0.01)


def test_negative_exponent_chinchilla_diverges():
    res = asymptotic_limit(ChinchillaLaw(0.2, 1.0, -0.1, 1.0, 0.3))
    assert res.kind == DIVERGENT and res.value is None


def test_zero_exponent_chinchilla_keeps_coefficient():
    res = asymptotic_limit(ChinchillaLaw(0.2, 1.0, 0.0, 1.0, 0.3))
    assert res.value == pytest.approx(1.2)


def test_farseer_diverging_prefactor_is_path_dependent():
    law = FarseerLaw(-0.0047, 0.239, -0.8188, 1.0, 0.1, -14.0, -0.0209, 0.1943, -0.1826)
    assert asymptotic_limit(law).kind == PATH_DEPENDENT


def test_farseer_all_terms_vanish_gives_zero():
    law = FarseerLaw(-1.0, 0.2, 0.0, -1.0, 0.2, 0.0, 1.0, 0.1, 0.0)
    res = asymptotic_limit(law)
    assert res.kind == ZERO and res.value == 0.0


def test_farseer_growing_n_term_diverges():
    law = FarseerLaw(0.01, 0.2, 0.0, -1.0, 0.2, 0.0, 1.0, 0.1, 0.0)
    assert asymptotic_limit(law).kind == DIVERGENT


def test_farseer_limit_agrees_with_large_evaluation():
    # the prefactor decays like n^-0.0614, so convergence needs astronomically large n
    lim = asymptotic_limit(CODE_FARSEER).value
    assert CODE_FARSEER.loss(1e30, 1e60) > 2 * lim
    assert CODE_FARSEER.loss(1e100, 1e100) == pytest.approx(lim, rel=1e-4)


def test_farseer_limit_approach_is_monotone_far_out():
    # along d = n^2, loss keeps dropping towards exp(Q)
    ns = np.geomspace(1e12, 1e30, 10)
    vals = CODE_FARSEER.loss(ns, ns**2)
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] > asymptotic_limit(CODE_FARSEER).value


positive_coef = st.floats(min_value=1e-2, max_value=1e4)
exponent = st.floats(min_value=0.05, max_value=1.0)


@settings(max_examples=60, deadline=None)
@given(e=st.floats(min_value=0.0, max_value=2.0), a=positive_coef, ea=exponent, b=positive_coef, eb=exponent)
def test_chinchilla_limit_bounds_every_evaluation(e, a, ea, b, eb):
    law = ChinchillaLaw(e, a, ea, b, eb)
    res = asymptotic_limit(law)
    assert res.value == e or (e == 0 and res.kind == ZERO)
    assert law.loss(1e12, 1e14) > res.value


@settings(max_examples=60, deadline=None)
@given(n=st.floats(min_value=1e6, max_value=1e12), d=st.floats(min_value=1e7, max_value=1e14))
def test_farseer_fixture_is_positive_and_decreasing_in_d(n, d):
    a = CODE_FARSEER.loss(n, d)
    b = CODE_FARSEER.loss(n, 2 * d)
    assert 0 < b < a
