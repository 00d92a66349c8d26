import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from finegrain.backbone import FeatureMap
from finegrain.diffcore import Linear, ShapeError, Tensor, backward, ops
from finegrain.selector import (
    PointLogits,
    classify_points,
    desk_scale_num_selects,
    rank_points,
    select,
    threshold_filter,
)


def logits_to_points(logits, hw):
    """Wrap (N, HW, C') logits as PointLogits without a head."""
    t = Tensor(np.asarray(logits, dtype=float))
    return PointLogits(1, t, ops.softmax(t, axis=-1), hw)


def feature_map(rng, n, c, h, w):
    return FeatureMap(1, Tensor(rng.normal(size=(n, c, h, w)), requires_grad=True))


def softmax_max(row):
    e = [math.exp(v) for v in row]
    return max(e) / sum(e)


WORKED = [[2.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 3.0]]


def test_worked_example_max_probs():
    pl = logits_to_points([WORKED], (2, 2))
    oracle = [softmax_max(r) for r in WORKED]
    np.testing.assert_allclose(oracle, [0.881, 0.5, 0.5, 0.953], atol=5e-4)
    np.testing.assert_allclose(pl.max_probs[0], oracle, rtol=1e-12)


@pytest.mark.parametrize("k,expected", [(1, [3]), (2, [3, 0])])
def test_worked_example_selection(rng, k, expected):
    pl = logits_to_points([WORKED], (2, 2))
    sr = select(pl, feature_map(rng, 1, 4, 2, 2), k)
    assert sr.selected_indices[0].tolist() == expected
    assert sr.mask.sum() == k


def test_zero_head_gives_uniform_probs(rng):
    head = Linear(rng, 5, 7)
    head.weight.data[:] = 0
    head.bias.data[:] = 0
    pl = classify_points(feature_map(rng, 2, 5, 3, 3), head)
    np.testing.assert_allclose(pl.probs.data, 1 / 7, rtol=1e-12)


def test_single_point_map_is_one_matvec(rng):
    head = Linear(rng, 4, 3)
    fm = feature_map(rng, 1, 4, 1, 1)
    pl = classify_points(fm, head)
    expected = fm.features.data[0, :, 0, 0] @ head.weight.data + head.bias.data
    np.testing.assert_allclose(pl.logits.data[0, 0], expected, rtol=1e-12)


def test_point_permutation_permutes_logits(rng):
    head = Linear(rng, 4, 3)
    fm = feature_map(rng, 1, 4, 3, 3)
    perm = rng.permutation(9)
    flat = fm.features.data.reshape(1, 4, 9)[:, :, perm].reshape(1, 4, 3, 3)
    a = classify_points(fm, head).logits.data[0]
    b = classify_points(FeatureMap(1, Tensor(flat)), head).logits.data[0]
    np.testing.assert_allclose(b, a[perm], rtol=1e-12)


def test_width_mismatch_fails(rng):
    with pytest.raises(ShapeError):
        classify_points(feature_map(rng, 1, 4, 2, 2), Linear(rng, 5, 3))


def test_select_everything(rng):
    pl = logits_to_points(rng.normal(size=(2, 9, 3)), (3, 3))
    sr = select(pl, feature_map(rng, 2, 4, 3, 3), 9)
    assert sr.mask.min() == 1
    assert sr.dropped_indices.shape == (2, 0)


@pytest.mark.parametrize("k", [0, 10])
def test_k_out_of_range(rng, k):
    pl = logits_to_points(rng.normal(size=(1, 9, 3)), (3, 3))
    with pytest.raises(ValueError, match="outside"):
        select(pl, feature_map(rng, 1, 4, 3, 3), k)


def test_ties_break_by_row_major_index(rng):
    pl = logits_to_points(np.zeros((1, 16, 4)), (4, 4))
    sr = select(pl, feature_map(rng, 1, 2, 4, 4), 5)
    assert sr.selected_indices[0].tolist() == [0, 1, 2, 3, 4]


def test_selected_features_are_map_rows_in_confidence_order(rng):
    pl = logits_to_points([WORKED], (2, 2))
    fm = feature_map(rng, 1, 6, 2, 2)
    sr = select(pl, fm, 3)
    rows = fm.features.data[0].reshape(6, 4).T
    np.testing.assert_array_equal(sr.selected_features.data[0], rows[[3, 0, 1]])


def test_many_random_maps_rank_correctly():
    r = np.random.default_rng(3)
    for _ in range(1000):
        hw = int(r.integers(1, 5)), int(r.integers(1, 5))
        n = hw[0] * hw[1]
        pl = logits_to_points(r.normal(size=(1, n, int(r.integers(2, 6)))), hw)
        k = int(r.integers(1, n + 1))
        order = rank_points(pl.max_probs)[0]
        sel, drop = order[:k], order[k:]
        if drop.size:
            assert pl.max_probs[0, sel].min() >= pl.max_probs[0, drop].max()


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 12), st.integers(2, 5)),
           elements=st.sampled_from([-1.0, 0.0, 0.5, 2.0])),
    st.data(),
)
def test_ranking_invariants(logits, data):
    n, hw, _ = logits.shape
    pl = logits_to_points(logits, (1, hw))
    k = data.draw(st.integers(1, hw))
    sr = select(pl, FeatureMap(1, Tensor(np.zeros((n, 2, 1, hw)))), k)
    conf = pl.max_probs
    assert np.all(sr.mask.sum(axis=(1, 2)) == k)
    assert set(np.unique(sr.mask)) <= {0, 1}
    for i in range(n):
        sel = sr.selected_indices[i]
        c = conf[i, sel]
        assert np.all(np.diff(c) <= 0)
        # equal confidence keeps ascending index
        for a, b in zip(sel, sel[1:]):
            if conf[i, a] == conf[i, b]:
                assert a < b
        if sr.dropped_indices.shape[1]:
            assert c.min() >= conf[i, sr.dropped_indices[i]].max()
        assert sorted(sel.tolist() + sr.dropped_indices[i].tolist()) == list(range(hw))


def test_selection_is_shift_equivariant():
    r = np.random.default_rng(8)
    h, w, k = 5, 6, 7
    maps = r.normal(size=(h, w, 4))
    dy, dx = 2, 3
    shifted = np.roll(maps, (dy, dx), axis=(0, 1))
    a = select(logits_to_points(maps.reshape(1, h * w, 4), (h, w)),
               FeatureMap(1, Tensor(np.zeros((1, 1, h, w)))), k)
    b = select(logits_to_points(shifted.reshape(1, h * w, 4), (h, w)),
               FeatureMap(1, Tensor(np.zeros((1, 1, h, w)))), k)
    moved = {((s // w + dy) % h) * w + (s % w + dx) % w for s in a.selected_indices[0]}
    assert moved == set(b.selected_indices[0].tolist())


def test_gradient_flows_to_selected_features_only(rng):
    fm = feature_map(rng, 1, 3, 2, 2)
    logits = Tensor(np.array([WORKED]), requires_grad=True)
    pl = PointLogits(1, logits, ops.softmax(logits, axis=-1), (2, 2))
    sr = select(pl, fm, 2)
    backward(ops.sum(sr.selected_features), [fm.features, logits])
    g = fm.features.grad[0].reshape(3, 4)
    assert np.all(g[:, [0, 3]] == 1) and np.all(g[:, [1, 2]] == 0)
    # the ranking contributes nothing to the logits
    assert np.all(logits.grad == 0)


def test_threshold_noop_when_all_confident(rng):
    pl = logits_to_points(np.tile([[5.0, 0.0]], (1, 4, 1)), (2, 2))
    sr = select(pl, feature_map(rng, 1, 2, 2, 2), 3)
    out = threshold_filter(sr, pl, 0.9)
    assert out.keep.all()
    assert out.kept(0).tolist() == sr.selected_indices[0].tolist()


def test_threshold_can_empty_the_selection(rng):
    pl = logits_to_points(np.zeros((1, 4, 2)), (2, 2))
    out = threshold_filter(select(pl, feature_map(rng, 1, 2, 2, 2), 3), pl, 0.9)
    assert out.kept(0).size == 0
    assert out.mask.sum() == 0


def test_threshold_removes_exactly_the_weak_points(rng):
    logits = rng.normal(scale=3, size=(1, 16, 3))
    pl = logits_to_points(logits, (4, 4))
    sr = select(pl, feature_map(rng, 1, 2, 4, 4), 10)
    out = threshold_filter(sr, pl, 0.8)
    conf = [softmax_max(logits[0, s]) for s in sr.selected_indices[0]]
    expected = [s for s, c in zip(sr.selected_indices[0], conf) if c >= 0.8]
    assert out.kept(0).tolist() == expected


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.5])
def test_threshold_range(rng, tau):
    pl = logits_to_points(np.zeros((1, 4, 2)), (2, 2))
    with pytest.raises(ValueError):
        threshold_filter(select(pl, feature_map(rng, 1, 2, 2, 2), 1), pl, tau)


def test_desk_scale_rule():
    assert desk_scale_num_selects([32, 16, 8, 4]) == [256, 128, 32, 8]
    assert desk_scale_num_selects([96, 48, 24, 12]) == [256, 128, 64, 32]
    assert desk_scale_num_selects([3]) == [5]
