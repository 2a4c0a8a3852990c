import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_expected, brute_max, random_convex

from cswitch.envelope import (ConvexityError, ExpectationPlan, OracleSample, envelope_from_oracle, evaluate,
                              evaluate_many, expected_pwl)
from cswitch.model import ANCHOR_TOL, DisturbanceSet, Grid, anchor_violations, tolerance_scale


def augmented(xs):
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    return Grid(np.column_stack([np.ones(xs.shape[0]), xs]), augmented=True)


def random_instance(rng, d=None, m=None, n_atoms=None):
    d = d or int(rng.integers(2, 5))
    m = m or int(rng.integers(2, 65))
    grid = augmented(rng.normal(size=(m, d - 1)))
    f = random_convex(rng, d, int(rng.integers(1, 12)))
    vals, subs = f(grid.points)
    tangents = envelope_from_oracle(OracleSample(vals, subs), grid)
    n = n_atoms or int(rng.integers(1, 8))
    mats = np.zeros((n, d, d))
    mats[:, 0, 0] = 1.0
    mats[:, 1:, 0] = 0.3 * rng.normal(size=(n, d - 1))
    mats[:, 1:, 1:] = np.eye(d - 1) + 0.4 * rng.normal(size=(n, d - 1, d - 1))
    w = rng.uniform(0.1, 1.0, n)
    w = w / w.sum()
    w[-1] = 1.0 - np.sum(w[:-1])
    return grid, tangents, DisturbanceSet(mats, w)


def test_evaluate_examples():
    rows = np.array([[40.0, -1.0], [0.0, 0.0]])
    assert evaluate(rows, [1, 36]) == (4.0, 0)
    assert evaluate(rows, [1, 60]) == (0.0, 1)
    assert evaluate(np.array([[2.5, 0.0, 0.0]]), [1, -3, 7]) == (2.5, 0)


def test_evaluate_tie_goes_to_first_row():
    rows = np.array([[0.0, 0.0], [40.0, -1.0], [0.0, 0.0]])
    assert evaluate(rows, [1, 40]) == (0.0, 0)


def test_evaluate_many_matches_loop():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(30, 3))
    pts = rng.normal(size=(500, 3))
    vals, arg = evaluate_many(rows, pts)
    for z, v, j in zip(pts, vals, arg):
        bv, bj = brute_max(rows, z)
        assert j == bj and v == pytest.approx(bv, abs=1e-13)
    cand = np.sort(rng.choice(30, size=(500, 5)), axis=1)
    vals, arg = evaluate_many(rows, pts, cand)
    for z, v, j, c in zip(pts, vals, arg, cand):
        bv, bj = brute_max(rows[c], z)
        assert j == c[bj] and v == pytest.approx(bv, abs=1e-13)


def test_put_payoff_envelope():
    grid = augmented([30, 40, 50])
    sample = OracleSample(np.array([10.0, 0.0, 0.0]), np.array([[0.0, -1.0], [0.0, -1.0], [0.0, 0.0]]))
    assert np.array_equal(envelope_from_oracle(sample, grid), [[40, -1], [40, -1], [0, 0]])


def test_affine_function_rows_equal_coefficients():
    grid = augmented(np.linspace(-1, 1, 7))
    c = np.array([0.5, -2.0])
    rows = envelope_from_oracle(OracleSample(grid.points @ c, np.tile(c, (7, 1))), grid)
    assert np.allclose(rows, c, atol=1e-15)


def test_quadratic_envelope_dominance_and_anchors():
    xs = np.linspace(-2, 2, 11)
    grid = augmented(xs)
    rows = envelope_from_oracle(OracleSample(xs**2, np.column_stack([np.zeros(11), 2 * xs])), grid)
    z = np.random.default_rng(2).uniform(-3, 3, 1000)
    vals, _ = evaluate_many(rows, np.column_stack([np.ones(1000), z]))
    assert np.all(vals <= z**2 + 1e-12)
    anchors, _ = evaluate_many(rows, grid.points)
    assert np.allclose(anchors, xs**2, rtol=0, atol=1e-12)


def test_nonconvex_data_rejected():
    grid = augmented([0.0, 1.0, 2.0])
    # f = -z^2 with its derivative: concave
    sample = OracleSample(np.array([0.0, -1.0, -4.0]), np.array([[0.0, 0.0], [0.0, -2.0], [0.0, -4.0]]))
    with pytest.raises(ConvexityError) as info:
        envelope_from_oracle(sample, grid)
    i, j = info.value.pair
    assert i != j


def test_expected_identity_is_noop():
    rng = np.random.default_rng(4)
    grid = augmented(rng.normal(size=(20, 2)))
    pieces = rng.normal(size=(6, 3))
    # rows are copies of the maximizing piece, so ties only ever pick identical rows
    tangents = pieces[np.argmax(grid.points @ pieces.T, axis=1)]
    out = expected_pwl(tangents, grid, DisturbanceSet(np.eye(3)[None], [1.0]))
    assert np.array_equal(out, tangents)


def test_expected_linear_example():
    grid = Grid(np.array([[1.0, 0.0]]), augmented=True)
    out = expected_pwl(np.array([[0.0, 1.0]]), grid, DisturbanceSet(np.diag([1.0, 0.5])[None], [1.0]))
    assert np.array_equal(out, [[0.0, 0.5]])


def test_expected_matches_brute_force_with_ten_atoms():
    rng = np.random.default_rng(6)
    for _ in range(10):
        grid, tangents, ds = random_instance(rng, n_atoms=10)
        out = expected_pwl(tangents, grid, ds, k_nn=grid.m)
        want = brute_expected(tangents, grid.points, ds.matrices, ds.weights)
        assert np.max(np.abs(out - want)) <= 1e-12
        # evaluation at the anchors is the weighted average of the composed maxima
        ref = [sum(w * brute_max(tangents, W @ g)[0] for w, W in zip(ds.weights, ds.matrices))
               for g in grid.points]
        assert np.max(np.abs(evaluate_many(out, grid.points)[0] - ref)) <= 1e-12


def test_expected_rejects_mismatched_dimensions():
    grid = augmented([0.0, 1.0])
    with pytest.raises(ValueError):
        expected_pwl(np.zeros((3, 2)), grid, DisturbanceSet(np.eye(2)[None], [1.0]))
    with pytest.raises(ValueError):
        expected_pwl(np.zeros((2, 2)), grid, DisturbanceSet(np.eye(3)[None], [1.0]))
    with pytest.raises(ValueError):
        expected_pwl(np.zeros((2, 2)), grid, DisturbanceSet(np.eye(2)[None], [1.0]), k_nn=3)


def test_expected_worker_count_does_not_change_bits():
    rng = np.random.default_rng(9)
    grid, tangents, ds = random_instance(rng, d=3, m=200, n_atoms=40)
    for k in (None, 7):
        plan = ExpectationPlan(grid, ds, k)
        a = plan.apply(tangents, workers=1)
        b = plan.apply(tangents, workers=6)
        assert a.tobytes() == b.tobytes()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dominance_and_anchor_equality(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    grid = augmented(rng.normal(size=(int(rng.integers(1, 65)), d - 1)))
    f = random_convex(rng, d, int(rng.integers(1, 10)))
    vals, subs = f(grid.points)
    rows = envelope_from_oracle(OracleSample(vals, subs), grid)
    tol = ANCHOR_TOL * tolerance_scale(rows, grid.points, vals)
    test = np.column_stack([np.ones(200), 2 * rng.normal(size=(200, d - 1))])
    assert np.all(evaluate_many(rows, test)[0] <= f(test)[0] + tol)
    assert np.all(np.abs(evaluate_many(rows, grid.points)[0] - vals) <= tol)
    assert not anchor_violations(rows, grid)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_expected_is_monotone_in_the_tangents(seed):
    rng = np.random.default_rng(seed)
    grid, upper, ds = random_instance(rng)
    lower = upper.copy()
    drop = rng.random(grid.m) < 0.5
    lower[drop, 0] -= rng.uniform(0, 1, drop.sum())
    a = evaluate_many(expected_pwl(upper, grid, ds), grid.points)[0]
    b = evaluate_many(expected_pwl(lower, grid, ds), grid.points)[0]
    assert np.all(b <= a + 1e-12 * tolerance_scale(upper))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_exact_expected_output_is_anchored(seed):
    rng = np.random.default_rng(seed)
    grid, tangents, ds = random_instance(rng)
    assert not anchor_violations(expected_pwl(tangents, grid, ds), grid)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_anchored_values_nondecreasing_in_k(seed):
    # the candidate sets are nested in k, so each row's own anchored value can only grow
    rng = np.random.default_rng(seed)
    grid, tangents, ds = random_instance(rng, m=int(rng.integers(2, 25)))
    tol = 1e-12 * tolerance_scale(tangents, grid.points, ds.matrices)
    prev = None
    for k in range(1, grid.m + 1):
        own = np.sum(expected_pwl(tangents, grid, ds, k_nn=k) * grid.points, axis=1)
        if prev is not None:
            assert np.all(own >= prev - tol)
        prev = own
    assert np.array_equal(expected_pwl(tangents, grid, ds, k_nn=grid.m), expected_pwl(tangents, grid, ds))


def test_put_grid_evaluations_nondecreasing_in_k(put51_exact, put51):
    _, model = put51
    grid, ds = model.grid, model.disturbances[0]
    for t in (0, 25, 48):
        prev = None
        for k in (1, 2, 3, 5, 10, 20, 51):
            out = expected_pwl(put51_exact.value[t + 1, 1], grid, ds, k_nn=k)
            vals = evaluate_many(out, grid.points)[0]
            if k > 1:
                assert not anchor_violations(out, grid)
            if prev is not None:
                assert np.all(vals >= prev)
            prev = vals
