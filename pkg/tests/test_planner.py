import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codescale import CODE_CHINCHILLA, CODE_FARSEER, ArgumentError, ChinchillaLaw, UnsupportedLawError
from codescale.planner import (
    FlopConvention,
    chinchilla_optimal,
    family_convention,
    flops,
    golden_section,
    numeric_optimal,
    optimal_allocation,
    optimal_dn_curve,
)
from codescale.laws import LogGrid
from codescale.sweep import REFERENCE_FAMILY

BUDGETS = np.geomspace(1e19, 1e23, 5)


def brute_force_n(law, compute, lo=1e7, hi=1e12, points=2000, multiplier=6.0):
    """Iso-FLOP minimizer on a plain log grid."""
    ns = np.geomspace(lo, hi, points)
    losses = law.loss(ns, compute / (multiplier * ns))
    return ns[np.argmin(losses)]


def brute_force_interior_n(law, compute, lo, hi, points=20001, conv=FlopConvention()):
    ns = np.geomspace(lo, hi, points)
    losses = law.loss(ns, conv.tokens_for(ns, compute))
    mid = losses[1:-1]
    idx = np.flatnonzero((mid < losses[:-2]) & (mid < losses[2:])) + 1
    best = idx[np.argmin(losses[idx])]
    return ns[best]


@pytest.mark.parametrize("compute", BUDGETS)
def test_closed_form_matches_brute_force_scan(compute):
    alloc = chinchilla_optimal(CODE_CHINCHILLA, compute)
    n_bf = brute_force_n(CODE_CHINCHILLA, compute)
    # grid spacing is 0.6% in n, so 1% is the meaningful agreement level
    assert alloc.n_opt == pytest.approx(n_bf, rel=0.01)
    assert alloc.method == "closed_form"
    assert alloc.n_opt * alloc.d_opt * 6 == pytest.approx(compute, rel=1e-12)


@pytest.mark.parametrize("compute", BUDGETS)
def test_numeric_matches_closed_form(compute):
    closed = chinchilla_optimal(CODE_CHINCHILLA, compute)
    num = numeric_optimal(CODE_CHINCHILLA, compute)
    assert num.n_opt == pytest.approx(closed.n_opt, rel=1e-4)
    assert not num.at_boundary


def test_closed_form_slope_is_exponent_ratio():
    p = CODE_CHINCHILLA
    curve = optimal_dn_curve(CODE_CHINCHILLA, LogGrid(1e19, 1e23, 9))
    logs = np.log([(a.compute, a.dn_ratio) for a in curve])
    slopes = np.diff(logs[:, 1]) / np.diff(logs[:, 0])
    np.testing.assert_allclose(slopes, (p.exp_a - p.exp_b) / (p.exp_a + p.exp_b), atol=1e-9)


def test_farseer_optimum_at_reference_budget():
    alloc = numeric_optimal(CODE_FARSEER, 5.36e21, FlopConvention(6.0), search=(1e8, 5e10))
    assert 100 <= alloc.dn_ratio <= 250
    n_bf = brute_force_interior_n(CODE_FARSEER, 5.36e21, 1e8, 5e10)
    assert alloc.n_opt == pytest.approx(n_bf, rel=1e-3)


@pytest.mark.parametrize("compute", BUDGETS)
def test_farseer_numeric_matches_interior_brute_force(compute):
    conv = FlopConvention()
    alloc = optimal_allocation(CODE_FARSEER, compute, conv)
    lo = math.sqrt(compute / (6 * 1e5))
    hi = math.sqrt(compute / 6)
    assert alloc.n_opt == pytest.approx(brute_force_interior_n(CODE_FARSEER, compute, lo, hi), rel=2e-3)


def test_farseer_with_embedding_frontier_is_increasing():
    curve = optimal_dn_curve(CODE_FARSEER, LogGrid(1e19, 1e23, 9), family_convention())
    dn = [a.dn_ratio for a in curve]
    assert all(b > a for a, b in zip(dn, dn[1:]))


def test_with_embedding_basis_spends_budget_on_total_params():
    conv = family_convention()
    alloc = numeric_optimal(CODE_FARSEER, 1e21, conv)
    total = alloc.n_opt + conv.embedding(alloc.n_opt)
    assert 6 * total * alloc.d_opt == pytest.approx(1e21, rel=1e-9)


def test_with_embedding_basis_has_no_closed_form():
    with pytest.raises(UnsupportedLawError):
        chinchilla_optimal(CODE_CHINCHILLA, 1e21, family_convention())
    assert optimal_allocation(CODE_CHINCHILLA, 1e21, family_convention()).method == "numeric"


def test_closed_form_rejects_degenerate_coefficients():
    with pytest.raises(UnsupportedLawError):
        chinchilla_optimal(ChinchillaLaw(0.2, 0.0, 0.3, 10.0, 0.3), 1e21)
    with pytest.raises(UnsupportedLawError):
        chinchilla_optimal(CODE_FARSEER, 1e21)


def test_monotone_loss_reports_boundary():
    # no data term worth having: the optimum runs into the top of the bracket
    law = ChinchillaLaw(0.2, 500.0, 0.5, 1e-9, 0.3)
    alloc = numeric_optimal(law, 1e21, search=(1e6, 1e10))
    assert alloc.at_boundary
    assert alloc.n_opt == pytest.approx(1e10)


def test_narrow_bracket_rejected():
    with pytest.raises(ArgumentError):
        numeric_optimal(CODE_CHINCHILLA, 1e21, search=(1e9, 5e10))


def test_bracket_below_one_token_rejected():
    with pytest.raises(ArgumentError):
        numeric_optimal(CODE_CHINCHILLA, 1e12, search=(1e3, 1e12))


def test_nonpositive_compute_rejected():
    with pytest.raises(ArgumentError):
        chinchilla_optimal(CODE_CHINCHILLA, 0.0)
    with pytest.raises(ArgumentError):
        numeric_optimal(CODE_FARSEER, -1.0)


def test_flops_conventions():
    assert flops(1e9, 2e10) == 6 * 1e9 * 2e10
    assert flops(1e9, 2e10, FlopConvention(8.0)) == 8 * 1e9 * 2e10
    row = REFERENCE_FAMILY[7]
    conv = family_convention()
    assert flops(row.n_params, 1e10, conv, n_with_emb=row.n_with_emb) == 6 * row.n_with_emb * 1e10
    # the interpolated embedding count lands near the tabulated total
    assert conv.flop_params(row.n_params) == pytest.approx(row.n_with_emb, rel=0.02)


def test_reference_budget_consistent_with_embedding_inclusive_flops():
    # 6 * N_with_emb * D at the 2.27B / 341B validation run is within 2% of 5.36e21
    assert 6 * 2.58e9 * 341e9 == pytest.approx(5.36e21, rel=0.02)


def test_flat_basin_flag_on_flat_law():
    law = ChinchillaLaw(0.2, 1e-6, 0.5, 1e-6, 0.5)
    assert chinchilla_optimal(law, 1e21).flat_basin
    assert not chinchilla_optimal(CODE_CHINCHILLA, 1e21).flat_basin


def test_golden_section_on_parabola():
    x, fx = golden_section(lambda v: (v - 1.234) ** 2, -5.0, 5.0, 1e-10)
    assert x == pytest.approx(1.234, abs=1e-9)
    assert fx < 1e-18


@settings(max_examples=40, deadline=None)
@given(
    ea=st.floats(min_value=0.1, max_value=0.8),
    eb=st.floats(min_value=0.1, max_value=0.8),
    log_c=st.floats(min_value=19, max_value=23),
)
def test_closed_form_is_iso_flop_minimum(ea, eb, log_c):
    law = ChinchillaLaw(0.2, 500.0, ea, 80.0, eb)
    c = 10.0**log_c
    alloc = chinchilla_optimal(law, c)
    for factor in (0.9, 1.1):
        n = alloc.n_opt * factor
        assert law.loss(n, c / (6 * n)) >= alloc.predicted_loss - 1e-15
