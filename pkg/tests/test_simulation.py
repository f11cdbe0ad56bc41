import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmclab import ConfigurationError, EnvState, make_example
from bmclab.environment import EnvSequence, sample_env_sequence
from bmclab.kernels import SymmetricIndependent, aux_n_step_distribution
from bmclab.seeding import replicate_stream, stream
from bmclab.simulation import (
    CountingMeasure,
    EmptyGenerationError,
    coalescence_samples,
    exact_coalescence_tails,
    expected_measure,
    simulate,
    simulate_backward,
)
from bmclab.traits import Bins, Distribution, HalfLine

A = np.array([[0.9, 0.1], [0.2, 0.8]])


def const_seq(pmf, n, trait_params=None):
    return EnvSequence((EnvState(0, pmf, trait_params),) * n)


def test_counting_measure_mass():
    Z = CountingMeasure(np.array([0, 1, 2]), np.array([3, 0, 5]))
    assert Z.total == 8
    assert Z.mass(Bins((0, 2))) == 8
    assert Z.mass(HalfLine(1.5)) == 3
    assert Z.as_dict() == {0: 3, 2: 5}


def test_single_lineage_follows_the_auxiliary_chain():
    model = SymmetricIndependent(A)
    seq = const_seq([0, 1], 6)
    init = Distribution.point_mass(0)
    hits = 0
    R = 4000
    for i in range(R):
        t = simulate(seq, init, model, rng=replicate_stream(0, i))
        assert np.all(t.N == 1)
        hits += t.mass(Bins((0,)))[-1]
    p = aux_n_step_distribution(init, seq, model)[0]
    assert abs(hits / R - p) <= 3 * math.sqrt(p * (1 - p) / R)


def test_certain_extinction():
    t = simulate(const_seq([1.0, 0.0], 4), Distribution.point_mass(0), SymmetricIndependent(A),
                 rng=stream(0, 0, 0))
    assert t.extinct_at == 1
    assert list(t.N) == [1, 0, 0, 0, 0]
    assert not t.survived
    assert np.isnan(t.proportion(Bins((0,)))[1])


def test_binary_tree_doubles_and_W_is_one():
    t = simulate(const_seq([0, 0, 1], 8), Distribution.point_mass(0), SymmetricIndependent(A),
                 rng=stream(0, 0, 0))
    assert list(t.N) == [2**k for k in range(9)]
    np.testing.assert_allclose(t.W, 1.0, rtol=1e-12)


@pytest.mark.parametrize("mode", ["aggregated", "explicit"])
def test_first_moment_matches_kernel_products(mode):
    e = make_example("ex3_2")
    seq = sample_env_sequence(e.env, 4, 6)
    logP, mu = expected_measure(e.init, seq, e.model, 6)
    R = 1500
    vals = np.array([
        simulate(seq, e.init, e.model, n=6, mode=mode, rng=replicate_stream(9, i)).mass(Bins((0,)))[-1]
        for i in range(R)
    ]) / math.exp(logP)
    se = vals.std(ddof=1) / math.sqrt(R)
    assert abs(vals.mean() - mu.prob(Bins((0,)))) <= 3 * se


def test_explicit_tree_is_consistent():
    e = make_example("ex3_4")
    seq = sample_env_sequence(e.env, 0, 5)
    t = simulate(seq, e.init, e.model, n=5, mode="explicit", rng=stream(0, 0, 0))
    tree = t.tree
    assert tree.depth == 5
    for g in range(6):
        assert tree.size(g) == t.N[g]
    for g in range(1, 6):
        par = tree.parent[tree.nodes(g)]
        assert np.all((par >= tree.offsets[g - 1]) & (par < tree.offsets[g]))
        assert np.all(np.diff(par) >= 0)


def test_population_cap_truncates():
    t = simulate(const_seq([0, 0, 1], 20), Distribution.point_mass(0), SymmetricIndependent(A),
                 cap=1000, rng=stream(0, 0, 0))
    assert t.truncated
    assert not t.survived
    assert t.N[-1] <= 1000


def test_explicit_mode_node_budget():
    with pytest.raises(ConfigurationError):
        simulate(const_seq([0, 0, 1], 30), Distribution.point_mass(0), SymmetricIndependent(A),
                 mode="explicit", rng=stream(0, 0, 0))


def test_rng_is_required():
    with pytest.raises(ValueError):
        simulate(const_seq([0, 1], 2), Distribution.point_mass(0), SymmetricIndependent(A))


def test_backward_simulation_uses_reversed_environment():
    a = EnvState(0, [0, 1])
    b = EnvState(1, [0, 0, 1])
    seq = EnvSequence((a, a, b))
    t = simulate_backward(seq, Distribution.point_mass(0), SymmetricIndependent(A), rng=stream(0, 0, 0))
    assert t.env_ids == (1, 0, 0)
    assert list(t.N) == [1, 2, 2, 2]


def test_aggregated_and_per_parent_paths_agree_in_law():
    e = make_example("ex3_3", {"offspring": [[0, 0.5, 0.5], [0, 0, 0.5, 0.5]]})
    seq = sample_env_sequence(e.env, 2, 5)
    R = 1500

    def sample(per_parent):
        return np.array([
            simulate(seq, e.init, e.model, n=5, per_parent=per_parent, rng=stream(per_parent, 0, i)).proportion(
                Bins((0,)))[-1]
            for i in range(R)
        ])

    x, y = sample(False), sample(True)
    se = math.hypot(x.std() / math.sqrt(R), y.std() / math.sqrt(R))
    assert abs(x.mean() - y.mean()) <= 3 * se


def _binary_tree(n):
    return simulate(const_seq([0, 0, 1], n), Distribution.point_mass(0), SymmetricIndependent(A),
                    mode="explicit", rng=stream(0, 0, 0)).tree


def test_exact_tails_on_the_binary_tree():
    n = 8
    tails = exact_coalescence_tails(_binary_tree(n), n)
    np.testing.assert_allclose(tails, [2.0**-K for K in range(n + 1)], rtol=1e-12)


def test_exact_tails_agree_with_pair_enumeration():
    # on the complete binary tree, labels in birth order share their first
    # K ancestors iff they agree on their top K bits
    n = 7
    N = 2**n
    u, v = np.meshgrid(np.arange(N), np.arange(N))
    depth = n - np.array([int(w).bit_length() for w in (u ^ v).ravel()])
    enumerated = [(depth >= K).mean() for K in range(n + 1)]
    np.testing.assert_allclose(exact_coalescence_tails(_binary_tree(n), n), enumerated, rtol=1e-12)


def test_sampled_tails_are_monotone_and_start_at_one():
    n = 8
    h = coalescence_samples(_binary_tree(n), n, 5000, stream(0, 3, 0))
    t = h.tails()
    assert t[0] == 1.0
    assert np.all(np.diff(t) <= 0)
    assert h.tail(n + 1) == 0.0
    assert h.std_errors().shape == (n + 1,)


def test_coalescence_on_extinct_generation():
    t = simulate(const_seq([1.0, 0.0], 3), Distribution.point_mass(0), SymmetricIndependent(A),
                 mode="explicit", rng=stream(0, 0, 0))
    with pytest.raises(EmptyGenerationError):
        exact_coalescence_tails(t.tree, 3)


def test_continuous_traits_keep_every_particle():
    e = make_example("ex3_5")
    seq = sample_env_sequence(e.env, 0, 6)
    t = simulate(seq, e.init, e.model, rng=stream(0, 0, 0))
    Z = t.measures[-1]
    assert Z.total == 64
    assert Z.individuals().size == 64


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["ex3_1", "ex3_2", "ex3_3", "ex3_4", "ex3_6"]))
def test_measure_totals_equal_population_sizes(seed, name):
    e = make_example(name)
    seq = sample_env_sequence(e.env, seed, 6)
    t = simulate(seq, e.init, e.model, rng=stream(seed, 0, 0))
    for k, Z in enumerate(t.measures):
        assert Z.total == t.N[k]
        assert np.all(Z.counts >= 0)
        assert Z.mass(HalfLine(math.inf)) == t.N[k]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_simulation_is_a_function_of_the_stream(seed):
    e = make_example("ex3_3", {"offspring": [[0, 0.5, 0.5], [0, 0, 0.5, 0.5]]})
    seq = sample_env_sequence(e.env, seed, 6)
    a = simulate(seq, e.init, e.model, rng=stream(seed, 0, 1))
    b = simulate(seq, e.init, e.model, rng=stream(seed, 0, 1))
    np.testing.assert_array_equal(a.N, b.N)
    np.testing.assert_array_equal(a.measures[-1].counts, b.measures[-1].counts)
