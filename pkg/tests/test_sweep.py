import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codescale import ArgumentError, EmptyPlanError, InfeasibleError, LogGrid, RangeError
from codescale.sweep import (
    DEFAULT_VOCAB,
    REFERENCE_D_COUNT,
    REFERENCE_FAMILY,
    ArchConfig,
    GpuPlan,
    SweepSpec,
    count_params,
    derive_arch,
    embedding_params,
    plan_gpus,
    plan_sweep,
    reference_sweep_spec,
)

VALIDATION_BATCHES = [(640, 2, 32, 160, 2, 2), (1080, 9, 8, 120, 9, 1), (1456, 13, 8, 112, 13, 1)]


def row_arch(row, vocab=DEFAULT_VOCAB):
    return ArchConfig.from_dims(row.d_model, row.d_ff, row.n_head, row.n_layer, vocab)


@pytest.mark.parametrize("row", REFERENCE_FAMILY, ids=lambda r: f"model{r.model}")
def test_count_params_matches_reference_family(row):
    n, n_emb = count_params(row_arch(row))
    assert n == pytest.approx(row.n_params, rel=0.01)
    assert n_emb == pytest.approx(row.n_with_emb, rel=0.02)


def test_model7_formula_by_hand():
    r = REFERENCE_FAMILY[6]
    blocks = 32 * (4 * 2048**2 + 3 * 2048 * 5448)
    assert blocks == pytest.approx(1.608e9, rel=1e-3)
    n, _ = count_params(row_arch(r))
    assert n == blocks + (2 * 32 + 1) * 2048


def test_vocab_inference_oracle():
    # recompute the vocabulary from the reference-family deltas, assuming untied embeddings
    est = [(r.n_with_emb - r.n_params) / (2 * r.d_model) for r in REFERENCE_FAMILY]
    assert np.mean(est) == pytest.approx(DEFAULT_VOCAB, rel=0.02)
    r1 = REFERENCE_FAMILY[0]
    assert count_params(row_arch(r1, 65_430))[1] == pytest.approx(335e6, rel=0.02)


@pytest.mark.parametrize(
    "target,dims",
    [(1.61e9, (2048, 5448, 32, 32)), (2.27e9, (2304, 6064, 36, 36)), (2.0e8, (1024, 2728, 16, 16))],
)
def test_derive_arch_picks_reference_rows(target, dims):
    a = derive_arch(target)
    assert (a.d_model, a.d_ff, a.n_head, a.n_layer) == dims


@pytest.mark.parametrize("row", REFERENCE_FAMILY, ids=lambda r: f"model{r.model}")
def test_derive_arch_round_trip(row):
    a = derive_arch(row.n_params)
    assert count_params(a)[0] == pytest.approx(row.n_params, rel=0.01)
    assert 2.5 <= a.d_ff / a.d_model <= 2.8
    assert a.n_head == a.d_model // 64


def test_rescaled_layers_close_the_gap():
    target = 5e9
    plain = derive_arch(target)
    scaled = derive_arch(target, rescale_layers=True)
    assert abs(scaled.n_params - target) < abs(plain.n_params - target)
    assert (scaled.d_model, scaled.d_ff) == (plain.d_model, plain.d_ff)
    assert abs(scaled.n_params - target) / target < 0.03


@pytest.mark.parametrize("target", [5e7, 2e10])
def test_derive_arch_range(target):
    with pytest.raises(RangeError):
        derive_arch(target)


def test_arch_invariants():
    with pytest.raises(ArgumentError):
        ArchConfig.from_dims(1024, 2728, 16, 0)
    with pytest.raises(ArgumentError):
        ArchConfig.from_dims(1000, 2728, 16, 4)
    with pytest.raises(ArgumentError):
        ArchConfig(1024, 2728, 16, 16, 100, 50)


def test_embedding_params_continuous_and_exact_on_rows():
    for r in REFERENCE_FAMILY:
        assert embedding_params(r.n_params) == pytest.approx(2 * DEFAULT_VOCAB * r.d_model, rel=1e-12)
    ns = np.geomspace(1e7, 1e11, 400)
    vals = embedding_params(ns)
    assert np.all(np.diff(vals) > 0)


# ---------------------------------------------------------------------------
# sweeps


def test_reference_sweep_has_117_points():
    plan = plan_sweep(reference_sweep_spec())
    assert plan.count == 117 == len(REFERENCE_FAMILY) * REFERENCE_D_COUNT
    ds = {}
    for n, d in plan.points:
        ds.setdefault(n, []).append(d)
    assert all(len(v) == 13 for v in ds.values())
    assert min(ds[3_180_000_000]) == 4_000_000_000
    assert max(ds[798_000_000]) == 91_000_000_000


def test_shared_grid_with_ratio_bounds():
    # one shared D grid with D/N in [2, 640] keeps 107 of 117 points
    spec = SweepSpec([r.n_params for r in REFERENCE_FAMILY], LogGrid(2e9, 128e9, 13), (2.0, 640.0))
    plan = plan_sweep(spec)
    assert plan.unpruned == 117
    assert plan.count == 107
    assert all(2.0 <= d / n <= 640.0 for n, d in plan.points)


def test_single_point_sweep():
    plan = plan_sweep(SweepSpec([1e9], LogGrid(2e10, 2e10, 1)))
    assert plan.points == ((1_000_000_000, 20_000_000_000),)


def test_all_pruned_raises():
    spec = SweepSpec([r.n_params for r in REFERENCE_FAMILY], LogGrid(2e9, 128e9, 13), (1e6, 2e6))
    with pytest.raises(EmptyPlanError):
        plan_sweep(spec)


def test_sweep_spec_validation():
    with pytest.raises(ArgumentError):
        SweepSpec([1e9], LogGrid(1e9, 1e10, 3), (5.0, 1.0))
    with pytest.raises(ArgumentError):
        SweepSpec([], LogGrid(1e9, 1e10, 3))
    with pytest.raises(ArgumentError):
        LogGrid(1e10, 1e9, 3)


def test_sweep_is_deterministic():
    assert plan_sweep(reference_sweep_spec()) == plan_sweep(reference_sweep_spec())


@settings(max_examples=50, deadline=None)
@given(
    n_count=st.integers(1, 6),
    d_count=st.integers(1, 8),
    lo=st.floats(0.0, 50.0),
    width=st.floats(1.0, 1e3),
)
def test_sweep_is_pruned_subset(n_count, d_count, lo, width):
    n_grid = LogGrid(1e8, 1e10, n_count) if n_count > 1 else LogGrid(1e9, 1e9, 1)
    d_grid = LogGrid(1e9, 1e12, d_count) if d_count > 1 else LogGrid(1e11, 1e11, 1)
    spec = SweepSpec(n_grid, d_grid, (lo, lo + width))
    full = {(int(round(n)), int(round(d))) for n in n_grid.values() for d in d_grid.values()}
    try:
        plan = plan_sweep(spec)
    except EmptyPlanError:
        assert all(not (lo <= d / n <= lo + width) for n, d in full)
        return
    assert set(plan.points) <= full
    assert list(plan.points) == sorted(plan.points)
    assert all(lo <= d / n <= lo + width for n, d in plan.points)


# ---------------------------------------------------------------------------
# GPU allocation


@pytest.mark.parametrize("gbz,mbz_max,step,gpus,mbz,accum", VALIDATION_BATCHES)
def test_gpu_plan_reproduces_validation_batches(gbz, mbz_max, step, gpus, mbz, accum):
    assert plan_gpus(gbz, mbz_max, step) == GpuPlan(gbz, mbz, gpus, accum)


def test_gpu_plan_infeasible_suggests_neighbours():
    with pytest.raises(InfeasibleError) as info:
        plan_gpus(641, 2, 32)
    assert info.value.suggestions == (640,)
    with pytest.raises(InfeasibleError) as info:
        plan_gpus(7, 1, 8)
    assert 8 in info.value.suggestions


def test_gpu_plan_rejects_inexact_construction():
    with pytest.raises(ArgumentError):
        GpuPlan(640, 3, 160, 1)


def brute_force_gpu_plan(gbz, mbz_max, step, max_gpus):
    best = None
    for gpus in range(step, max_gpus + 1, step):
        for mbz in range(1, mbz_max + 1):
            if gbz % (gpus * mbz) == 0:
                key = (gbz // (gpus * mbz), -mbz, gpus)
                best = key if best is None or key < best else best
    return best


@settings(max_examples=100, deadline=None)
@given(gbz=st.integers(1, 4096), mbz_max=st.integers(1, 16), step=st.sampled_from([1, 4, 8, 32]))
def test_gpu_plan_matches_brute_force(gbz, mbz_max, step):
    oracle = brute_force_gpu_plan(gbz, mbz_max, step, 256)
    if oracle is None:
        with pytest.raises(InfeasibleError):
            plan_gpus(gbz, mbz_max, step)
        return
    p = plan_gpus(gbz, mbz_max, step)
    assert p.gpus * p.mbz * p.accum == gbz
    assert (p.accum, -p.mbz, p.gpus) == oracle
