import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cswitch.model import BermudanPut, Swing
from cswitch.sampling import (PathBundle, RandomEntry, RandomEntrySpec, SubsimBundle, apply_matrices, gen_paths,
                              gen_subsim, keyed_normals, monte_carlo_sampling, partition_sampling)


def scalar_spec(shock="normal", kind="affine", a=0.0, b=1.0, log_mean=0.0, log_sd=1.0):
    return RandomEntrySpec(np.zeros((1, 1)), (RandomEntry(0, 0, a, b, kind),), shock, log_mean, log_sd)


def atoms(ds):
    return ds.matrices[:, 0, 0]


def test_two_normal_cells():
    ds = partition_sampling(scalar_spec(), 2)
    assert np.allclose(atoms(ds), [-math.sqrt(2 / math.pi), math.sqrt(2 / math.pi)], rtol=0, atol=1e-15)
    assert np.array_equal(ds.weights, [0.5, 0.5])


def test_single_cell_is_the_mean():
    assert atoms(partition_sampling(scalar_spec(a=1.5, b=2.0), 1)) == pytest.approx([1.5], abs=1e-15)
    spec = scalar_spec("lognormal", log_mean=0.1, log_sd=0.3)
    assert atoms(partition_sampling(spec, 1))[0] == pytest.approx(math.exp(0.1 + 0.045), rel=1e-14)


def test_put_sampling_mean_and_weights():
    params = BermudanPut()
    spec = params.dynamics()
    ds = partition_sampling(spec, 1000)
    assert np.all(ds.weights == 1 / 1000)
    eps = ds.matrices[:, 1, 1]
    target = math.exp(spec.log_mean + 0.5 * spec.log_sd**2)
    assert abs(math.fsum(eps * ds.weights) - target) <= 1e-6
    assert np.all(np.diff(eps) > 0)
    assert np.all(ds.matrices[:, 0] == [1.0, 0.0]) and np.all(ds.matrices[:, 1, 0] == 0.0)


def test_swing_sampling_structure():
    params = Swing()
    ds = partition_sampling(params.dynamics(), 500)
    assert np.all(ds.matrices[:, 1, 1] == pytest.approx(0.1))
    assert np.all(np.diff(ds.matrices[:, 1, 0]) > 0)
    assert abs(np.sum(ds.matrices[:, 1, 0] * ds.weights)) <= 1e-12


@pytest.mark.parametrize("n", [3, 10, 57])
def test_cell_means_match_quadrature(n):
    edges = stats.norm.ppf(np.arange(n + 1) / n)
    root = math.sqrt(2 * math.pi)
    # integrands carry the normal density inside the exponent so the infinite end cells stay finite
    cases = [
        (scalar_spec(a=0.3, b=-1.7), lambda x: (0.3 - 1.7 * x) * math.exp(-0.5 * x * x) / root),
        (scalar_spec(kind="exp", a=0.1, b=0.4), lambda x: math.exp(0.1 + 0.4 * x - 0.5 * x * x) / root),
        (scalar_spec("lognormal", a=2.0, b=3.0, log_mean=-0.05, log_sd=0.25),
         lambda x: (2.0 * math.exp(-0.5 * x * x) + 3.0 * math.exp(-0.05 + 0.25 * x - 0.5 * x * x)) / root),
    ]
    for spec, fn in cases:
        got = atoms(partition_sampling(spec, n))
        for k in range(n):
            num, _ = integrate.quad(fn, edges[k], edges[k + 1],
                                    epsabs=1e-13, epsrel=1e-12)
            assert got[k] == pytest.approx(num * n, rel=1e-8, abs=1e-10)


def test_exp_of_lognormal_rejected():
    with pytest.raises(ValueError):
        partition_sampling(scalar_spec("lognormal", kind="exp"), 4)


def test_bad_cell_count_rejected():
    with pytest.raises(ValueError):
        partition_sampling(scalar_spec(), 0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1, 1), st.floats(0.01, 0.8), st.integers(1, 400), st.sampled_from(["affine", "exp"]))
def test_partition_preserves_the_mean(a, b, n, kind):
    spec = scalar_spec(kind=kind, a=a, b=b)
    got = math.fsum(atoms(partition_sampling(spec, n)) / n)
    want = a if kind == "affine" else math.exp(a + 0.5 * b * b)
    assert abs(got - want) <= 1e-6 * max(1.0, abs(want))


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.01, 0.8), st.integers(2, 400))
def test_lognormal_atoms_increase_and_preserve_mean(u, s, n):
    ds = partition_sampling(scalar_spec("lognormal", log_mean=u, log_sd=s), n)
    assert np.all(np.diff(atoms(ds)) > 0)
    assert abs(math.fsum(atoms(ds) / n) - math.exp(u + s * s / 2)) <= 1e-6


def test_monte_carlo_antithetic_pair():
    ds = monte_carlo_sampling(scalar_spec(), 2, seed=5, antithetic=True)
    x = atoms(ds)
    assert x[1] == -x[0] and x[0] + x[1] == 0.0
    with pytest.raises(ValueError):
        monte_carlo_sampling(scalar_spec(), 3, seed=5, antithetic=True)


def test_monte_carlo_reproducible_and_centred():
    a = monte_carlo_sampling(scalar_spec(), 10_000, seed=42)
    b = monte_carlo_sampling(scalar_spec(), 10_000, seed=42)
    assert a.matrices.tobytes() == b.matrices.tobytes()
    assert abs(np.mean(atoms(a))) <= 3 / math.sqrt(10_000)
    assert np.all(a.weights == 1e-4)


def test_identity_dynamics_keep_the_start():
    spec = RandomEntrySpec(np.eye(3))
    paths = gen_paths([1.0, 2.0, -3.0], spec, 4, 6, seed=1)
    assert np.all(paths.states == [1.0, 2.0, -3.0])


def test_put_paths_are_antithetic():
    params = BermudanPut()
    spec = params.dynamics()
    paths = gen_paths(params.start_state(), spec, 2, params.n_dec, seed=3)
    z = (np.log(paths.disturbances[:, :, 1, 1]) - spec.log_mean) / spec.log_sd
    assert np.allclose(z[1], -z[0], rtol=0, atol=1e-12)
    assert np.all(paths.states[:, :, 0] == 1.0)


def test_put_paths_terminal_mean():
    params = BermudanPut()
    paths = gen_paths(params.start_state(), params.dynamics(), 500, params.n_dec, seed=12345)
    final = paths.states[:, -1, 1]
    se = final.std(ddof=1) / math.sqrt(final.size)
    assert abs(final.mean() - 36 * math.exp(0.06)) <= 3 * se


def test_path_recursion_is_exact():
    params = Swing()
    paths = gen_paths(params.start_state(), params.dynamics(), 6, 20, seed=9)
    assert np.array_equal(paths.states[:, 0], np.tile(params.start_state(), (6, 1)))
    for t in range(19):
        nxt = apply_matrices(paths.disturbances[:, t], paths.states[:, t])
        assert np.array_equal(paths.states[:, t + 1], nxt)
        manual = np.einsum("nij,nj->ni", paths.disturbances[:, t], paths.states[:, t])
        assert np.allclose(paths.states[:, t + 1], manual, rtol=1e-15, atol=1e-15)


def test_path_prefix_property():
    # each time slice is keyed on its own: a shorter horizon reproduces the first steps
    spec = Swing().dynamics()
    long = gen_paths([1, 0], spec, 8, 30, seed=4)
    short = gen_paths([1, 0], spec, 8, 10, seed=4)
    assert np.array_equal(long.states[:, :10], short.states)


def test_path_errors():
    with pytest.raises(ValueError):
        gen_paths([1, 0], Swing().dynamics(), 3, 5, seed=1, antithetic=True)
    with pytest.raises(ValueError):
        gen_paths([1, 0], Swing().dynamics(), 2, 1, seed=1)


def test_degenerate_subsim_equals_the_constant():
    spec = RandomEntrySpec(np.array([[1.0, 0.0], [0.2, 0.5]]), (RandomEntry(1, 0, 0.2, 0.0),))
    bundle = gen_subsim(spec, 1, 3, 4, seed=0, antithetic=False)
    assert np.all(bundle.tensor() == spec.constant)
    assert bundle.weights.tolist() == [1.0]


def test_subsim_reproducible_and_sliceable():
    spec = Swing().dynamics()
    a = gen_subsim(spec, 6, 5, 4, seed=10).tensor()
    b = gen_subsim(spec, 6, 5, 4, seed=10).tensor()
    assert a.shape == (6, 5, 3, 2, 2)
    assert a.tobytes() == b.tobytes()
    part = gen_subsim(spec, 6, 5, 4, seed=10).slice(2, [3, 1])
    assert np.array_equal(part, np.moveaxis(a[:, [3, 1], 2], 0, 1))
    c = gen_subsim(spec, 6, 5, 4, seed=11).tensor()
    assert not np.array_equal(a, c)


def test_subsim_antithetic_sums_vanish():
    spec = Swing().dynamics()
    bundle = gen_subsim(spec, 500, 4, 6, seed=12345)
    shocks = bundle.tensor()[:, :, :, 1, 0]
    assert np.all(np.sum(shocks, axis=0) == 0.0)
    bundle = SubsimBundle.from_tensor(bundle.tensor())
    assert bundle.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_keyed_normals_distinct_streams():
    a = keyed_normals(1, (1, 0), 100, False)
    b = keyed_normals(1, (1, 1), 100, False)
    c = keyed_normals(1, (2, 0, 0), 100, False)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.array_equal(a, keyed_normals(1, (1, 0), 100, False))


def test_path_bundle_from_disturbances():
    mats = np.broadcast_to(np.array([[1.0, 0.0], [0.0, 2.0]]), (2, 3, 2, 2))
    paths = PathBundle.from_disturbances([1.0, 1.5], mats)
    assert paths.states[0, :, 1].tolist() == [1.5, 3.0, 6.0, 12.0]
