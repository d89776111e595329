import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flatlab.errors import InvariantViolation
from flatlab.geodesy import distances, edge_lengths, farthest_point_landmarks, node_volumes
from flatlab.goodset import (epsilon_from_lambda, retained_matrix, sample_pairs, select_S_epsilon,
                             select_W, slice_volumes, sphere_cap_epsilon, verify_good_set)
from flatlab.mesh import build_chart, build_graph
from flatlab.metrics import IlmanenWells, RoundSphere, sphere_distance

from oracles import cap_epsilon


@pytest.fixture(scope="module")
def round_rows():
    """Round sphere at resolution 64 with 40 farthest-point landmarks."""
    c = build_chart("sphere", 64)
    g = build_graph(c, 2, metric=RoundSphere())
    rows = farthest_point_landmarks(g, edge_lengths(g, RoundSphere()), 40, start=int(c.poles[0]))
    return c, rows.sources, rows.values, node_volumes(c, RoundSphere())


def selection(ctx, eps, kappa):
    pv = ctx.pairs.pair_values
    sel = select_S_epsilon(pv(ctx.square(ctx.dj_rows)), pv(ctx.square(ctx.d0_rows)), ctx.pairs, eps)
    W = select_W(slice_volumes(sel.mask, ctx.pairs), kappa, eps, ctx.pairs, sel, cells=ctx.cells,
                 node_vol0=ctx.node_vol0, node_volj=ctx.node_volj)
    return sel, W


def test_full_product_combinatorics():
    c = build_chart("sphere", 16)
    lm = np.arange(0, 50 * 7, 7)
    pairs = sample_pairs(c, RoundSphere(), landmarks=lm)
    assert len(pairs.pairs) == 50 * 49 // 2
    assert pairs.symmetric
    assert pairs.total_weight == pytest.approx(pairs.total_volume ** 2, rel=1e-10)
    assert np.all(pairs.pair_weights > 0)


def test_random_sample_deterministic():
    c = build_chart("sphere", 16)
    a = sample_pairs(c, RoundSphere(), count=30, seed=7)
    b = sample_pairs(c, RoundSphere(), count=30, seed=7)
    np.testing.assert_array_equal(a.landmarks, b.landmarks)
    np.testing.assert_array_equal(a.pair_weights, b.pair_weights)
    with pytest.raises(ValueError):
        sample_pairs(c, RoundSphere(), count=10)


def test_identical_metrics_keep_everything(round_rows):
    c, lm, rows, vol0 = round_rows
    pairs = sample_pairs(c, RoundSphere(), landmarks=lm)
    sq = rows[:, lm]
    sel = select_S_epsilon(pairs.pair_values(sq), pairs.pair_values(sq), pairs, 0.1)
    assert sel.delta == 0.0 and sel.mask.all()
    sv = slice_volumes(sel.mask, pairs)
    np.testing.assert_allclose(sv, pairs.total_volume, rtol=1e-12)
    W = select_W(sv, 2.0, 0.1, pairs, sel)
    assert W.W_landmarks.all()
    rep = verify_good_set(W, sq, sq, 0.3, pairs, mesh_slack=0.0)
    assert rep["passed"] and rep["gap_worst"] == 0.0 and rep["gap_violations_without_slack"] == 0


def test_small_eps_keeps_max_gap(round_rows):
    c, lm, rows, vol0 = round_rows
    g = build_graph(c, 2, metric=RoundSphere())
    dj_sq = distances(g, edge_lengths(g, IlmanenWells(2)), lm).values[:, lm]
    pairs = sample_pairs(c, RoundSphere(), landmarks=lm)
    dj, d0 = pairs.pair_values(dj_sq), pairs.pair_values(rows[:, lm])
    # dropping any pair heavier than eps costs more than eps, so all of them stay;
    # the pole cells are near-degenerate and their pairs are left out of the claim
    share = pairs.pair_weights / pairs.total_weight
    heavy = share > 1e-9
    eps = share[heavy].min()
    sel = select_S_epsilon(dj, d0, pairs, eps)
    assert sel.mask[heavy].all()
    assert sel.delta >= np.max(np.abs(dj - d0)[heavy])
    with pytest.raises(ValueError):
        select_S_epsilon(dj, d0, pairs, 1.0)


def test_delta_decreases_along_ilmanen(ilmanen_context):
    deltas = [selection(ilmanen_context(j), 0.05, 2.0)[0].delta for j in (1, 2, 4, 8)]
    assert all(b < a for a, b in zip(deltas, deltas[1:])), deltas


def _well_interior(ctx):
    well = ctx.g_j
    nodes = ctx.chart.nodes
    dist = np.min([sphere_distance(nodes, np.tile(c, (len(nodes), 1))) for c in well.centers], axis=0)
    return dist < 0.5 * well.rho


def test_tip_slices_small(ilmanen_context):
    ctx = ilmanen_context(4)
    sel, W = selection(ctx, 0.05, 2.0)
    sv = W.slice_volumes
    tips = [i for i, node in enumerate(ctx.landmarks) if _well_interior(ctx)[node]]
    assert tips
    assert np.max(sv[tips]) < np.median(sv)


def test_W_excludes_well_interiors(ilmanen_context):
    ctx = ilmanen_context(4)
    _, W = selection(ctx, 0.05, 2.0)
    inner = _well_interior(ctx)
    assert inner.sum() > 0
    assert not np.any(W.W_nodes & inner)


def test_kappa_two_keeps_half():
    c = build_chart("sphere", 16)
    g = build_graph(c, 2, metric=RoundSphere())
    rows = farthest_point_landmarks(g, edge_lengths(g, RoundSphere()), 30, start=int(c.poles[0]))
    pairs = sample_pairs(c, RoundSphere(), landmarks=rows.sources)
    dj = distances(g, edge_lengths(g, IlmanenWells(2)), rows.sources).values[:, rows.sources]
    sel = select_S_epsilon(pairs.pair_values(dj), pairs.pair_values(rows.values[:, rows.sources]),
                           pairs, 0.1)
    W = select_W(slice_volumes(sel.mask, pairs), 2.0, 0.1, pairs, sel)
    assert W.vol0_W > 0.5 * W.vol0_total


def test_select_W_validation(ilmanen_context):
    ctx = ilmanen_context(2)
    sv = np.full(len(ctx.landmarks), ctx.pairs.total_volume)
    with pytest.raises(ValueError):
        select_W(sv, 1.0, 0.1, ctx.pairs)
    with pytest.raises(ValueError):
        select_W(sv, 4.0, 0.3, ctx.pairs)
    flagged = select_W(sv, 4.0, 0.15, ctx.pairs)
    assert flagged.flags


def test_epsilon_round_sphere_cap(round_rows):
    c, lm, rows, vol0 = round_rows
    eps = epsilon_from_lambda(vol0, rows, math.pi / 2, 2.0)
    assert abs(eps - 1 / 8) <= 0.02 / 8
    assert sphere_cap_epsilon(math.pi / 2, 2.0) == pytest.approx(cap_epsilon(math.pi / 2, 2.0), rel=1e-12)
    assert cap_epsilon(math.pi / 2, 2.0) == pytest.approx(1 / 8, rel=1e-12)


def test_epsilon_at_diameter(round_rows):
    c, lm, rows, vol0 = round_rows
    diam = rows.max()
    assert epsilon_from_lambda(vol0, rows, diam, 3.0) == pytest.approx(1 / 6, rel=1e-12)


@given(a=st.floats(0.05, 3.0), b=st.floats(0.05, 3.0))
def test_epsilon_nondecreasing(round_rows, a, b):
    c, lm, rows, vol0 = round_rows
    lo, hi = sorted((a, b))
    assert epsilon_from_lambda(vol0, rows, lo, 2.0) <= epsilon_from_lambda(vol0, rows, hi, 2.0)


def test_uniform_gap_bound_on_W(ilmanen_context):
    ctx = ilmanen_context(4)
    sel = ctx.good_set(2.0, 0.4)
    rep = verify_good_set(sel, ctx.square(ctx.dj_rows), ctx.square(ctx.d0_rows), 0.4, ctx.pairs,
                          2 * ctx.tau * ctx.D)
    assert rep["gap_violations"] == 0
    assert rep["intersection_violations"] == 0
    assert rep["passed"]


def test_tips_violate_gap_bound(ilmanen_context):
    ctx = ilmanen_context(4)
    lam = 0.4
    sel = ctx.good_set(2.0, lam)
    north, south = ctx.chart.poles
    lm = list(ctx.landmarks)
    a, b = lm.index(int(north)), lm.index(int(south))
    assert not sel.W_landmarks[a] and not sel.W_landmarks[b]
    gap = ctx.dj_rows[a, south] - ctx.d0_rows[a, south]
    assert gap > 2 * lam + 2 * sel.delta + 2 * ctx.tau * ctx.D


def test_selection_json(ilmanen_context, tmp_path):
    sel = ilmanen_context(2).good_set(2.0, 0.6)
    d = json.loads(sel.to_json(tmp_path / "g.json"))
    assert d["lemmas"]["vol0_W_ok"] and d["lemmas"]["volj_outside_ok"]
    assert len(d["W_nodes"]) == int(sel.W_nodes.sum())


# -- properties over the selection matrix -------------------------------------------

@given(j=st.sampled_from([1, 2, 4]), eps=st.floats(0.005, 0.2), kappa=st.floats(1.2, 6.0))
def test_selection_lemmas(ilmanen_context, j, eps, kappa):
    if kappa * eps >= 1:
        return
    ctx = ilmanen_context(j)
    sel, W = selection(ctx, eps, kappa)
    pairs = ctx.pairs
    # measure constraint
    assert sel.retained_weight > (1 - eps) * pairs.total_weight
    assert sel.retained_weight >= (1 - eps) * pairs.total_weight - pairs.pair_weights.max()
    checks = W.lemma_checks()
    assert checks["vol0_W_ok"] and checks["volj_outside_ok"]
    A = retained_matrix(sel.mask, pairs)
    assert np.array_equal(A, A.T)
    # q in S_p iff p in S_q, and the averaged slice inequality
    assert float(pairs.weights @ W.slice_volumes) > (1 - eps) * pairs.total_volume ** 2


@given(j=st.sampled_from([1, 2, 4]), e1=st.floats(0.005, 0.5), e2=st.floats(0.005, 0.5))
def test_delta_monotone_in_eps(ilmanen_context, j, e1, e2):
    ctx = ilmanen_context(j)
    pv = ctx.pairs.pair_values
    dj, d0 = pv(ctx.square(ctx.dj_rows)), pv(ctx.square(ctx.d0_rows))
    lo, hi = sorted((e1, e2))
    assert select_S_epsilon(dj, d0, ctx.pairs, lo).delta >= select_S_epsilon(dj, d0, ctx.pairs, hi).delta


def test_lemma_assertions_fire():
    c = build_chart("sphere", 16)
    pairs = sample_pairs(c, RoundSphere(), landmarks=np.arange(20))
    sv = np.zeros(20)
    with pytest.raises(InvariantViolation):
        select_W(sv, 2.0, 0.1, pairs)
