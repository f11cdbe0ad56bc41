import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmclab import ConfigurationError, DegenerateEnvironmentError, EnvState, make_example
from bmclab.environment import EnvSequence, EnvironmentSpec, LocationEnvironment
from bmclab.gallery import KERNEL_A, KERNEL_B
from bmclab.kernels import (
    FiniteStateJoint,
    IidIncrements,
    LocationRWRE,
    SymmetricIndependent,
    aux_marginal_path,
    aux_n_step_distribution,
    build_aux_kernel,
    sample_aux_path,
    sample_offspring,
)
from bmclab.seeding import stream
from bmclab.traits import Distribution

A = np.array(KERNEL_A)
B = np.array(KERNEL_B)


def test_symmetric_kernel_equals_base():
    # one child per generation or many: the lineage kernel is the base kernel
    for pmf in ([0, 0.5, 0.5], [0.2, 0, 0, 0.8], [0, 1]):
        Q = build_aux_kernel(EnvState(0, pmf), SymmetricIndependent(A)).exact
        np.testing.assert_allclose(Q, A, atol=1e-12)


def test_sibling_dependent_kernel_matches_hand_computation():
    # p_1 = p_2 = 1/2, first child of a pair uses A, second uses B: Q = (A + A + B) / 3
    state = EnvState(0, [0, 0.5, 0.5], {"kernels": {(1, 1): A, (2, 1): A, (2, 2): B}})
    Q = build_aux_kernel(state, FiniteStateJoint(2)).exact
    expected = np.array([[2.3 / 3, 0.7 / 3], [1.0 / 3, 2.0 / 3]])
    np.testing.assert_allclose(Q, expected, atol=1e-12)


def test_zero_mean_state_is_degenerate():
    with pytest.raises(DegenerateEnvironmentError):
        build_aux_kernel(EnvState(0, [1.0]), SymmetricIndependent(A))


def test_finite_joint_requires_every_litter_kernel():
    state = EnvState(0, [0, 0.5, 0.5], {"kernels": {(1, 1): A, (2, 1): A}})
    with pytest.raises(ConfigurationError, match=r"k=2, i=2"):
        build_aux_kernel(state, FiniteStateJoint(2))


def test_size_biased_sampler_matches_exact_rows():
    state = EnvState(0, [0, 0.5, 0.5], {"kernels": {(1, 1): A, (2, 1): A, (2, 2): B}})
    K = build_aux_kernel(state, FiniteStateJoint(2))
    rng = stream(0, 2, 0)
    draws = 100_000
    for x in range(2):
        y = K.sampler(np.full(draws, x), rng)
        freq = np.bincount(y, minlength=2) / draws
        se = np.sqrt(K.exact[x] * (1 - K.exact[x]) / draws)
        assert np.all(np.abs(freq - K.exact[x]) <= 3 * se)


def test_forward_and_backward_products_differ_for_noncommuting_kernels():
    model = FiniteStateJoint(2)
    sa = EnvState(0, [0, 0, 1], {"kernels": {(2, 1): A, (2, 2): A}})
    sb = EnvState(1, [0, 0, 1], {"kernels": {(2, 1): B, (2, 2): B}})
    seq = EnvSequence((sa, sb, sb))
    init = Distribution.point_mass(0)
    fwd = aux_n_step_distribution(init, seq, model, order="forward")
    bwd = aux_n_step_distribution(init, seq, model, order="backward")
    np.testing.assert_allclose(fwd, np.array([1.0, 0.0]) @ A @ B @ B, atol=1e-14)
    np.testing.assert_allclose(bwd, np.array([1.0, 0.0]) @ B @ B @ A, atol=1e-14)
    assert abs(fwd[0] - bwd[0]) > 1e-3


def test_marginal_path_rows_are_distributions():
    e = make_example("ex3_3")
    seq = EnvSequence(e.env.states * 3)
    rows = aux_marginal_path(e.init, seq, e.model)
    assert rows.shape == (7, 2)
    np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)


def test_iid_increments_moments():
    normal = EnvState(0, [0, 0, 1], {"dist": "normal", "mu": 0.5, "sigma2": 2.0})
    discrete = EnvState(1, [0, 0, 1], {"dist": "discrete", "values": [-1, 1], "probs": [0.25, 0.75]})
    assert IidIncrements.moments(normal) == pytest.approx((0.5, 2.0))
    assert IidIncrements.moments(discrete) == pytest.approx((0.5, 0.75))


def test_iid_increment_steps_have_the_right_law():
    state = EnvState(0, [0, 0, 1], {"dist": "normal", "mu": 1.0, "sigma2": 4.0})
    K = build_aux_kernel(state, IidIncrements())
    assert K.exact is None
    y = K.sampler(np.zeros(20000), stream(1, 2))
    assert abs(y.mean() - 1.0) < 4 * 2 / math.sqrt(20000)
    assert abs(y.var() - 4.0) < 0.2


def test_rwre_kernel_is_banded_and_follows_omega():
    loc = LocationEnvironment(np.array([0.2, 0.7]), radius=5)
    model = LocationRWRE(loc)
    Q = build_aux_kernel(EnvState(0, [0, 0, 1]), model).exact
    assert Q.shape == (11, 11)
    i0 = model.index(0)
    assert Q[i0, i0 + 1] == pytest.approx(0.2)
    assert Q[i0, i0 - 1] == pytest.approx(0.8)
    assert Q[model.index(1), model.index(2)] == pytest.approx(0.7)
    np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-12)


def test_rwre_kernel_ignores_time_environment():
    e = make_example("ex3_6", {"omega_seed": 4})
    Qs = [build_aux_kernel(s, e.model).exact for s in e.env.states]
    e2 = make_example("ex3_6", {"omega_seed": 4, "offspring": [[0, 0, 0, 1]], "weights": [1.0]})
    Q2 = build_aux_kernel(e2.env.states[0], e2.model).exact
    np.testing.assert_array_equal(Qs[0], Qs[1])
    np.testing.assert_array_equal(Qs[0], Q2)


def test_sample_aux_path_shapes():
    e = make_example("ex3_1")
    seq = EnvSequence(e.env.states * 5)
    p = sample_aux_path(0, seq, e.model, stream(0, 2), size=7)
    assert p.shape == (7, 6)
    assert np.all(p[:, 0] == 0)
    assert sample_aux_path(0, seq, e.model, stream(0, 2)).shape == (6,)


def test_sample_offspring_returns_litter():
    e = make_example("ex3_4")
    k, kids = sample_offspring(e.env.states[0], e.model, 1, stream(0, 0, 0))
    assert k == 3
    assert kids.shape == (3,)


stoch_row = st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3)


@settings(max_examples=40, deadline=None)
@given(st.lists(stoch_row, min_size=3, max_size=3), st.lists(st.floats(0.0, 1.0), min_size=2, max_size=4))
def test_aux_kernel_is_stochastic(rows, pmf):
    P = np.array(rows)
    P /= P.sum(axis=1, keepdims=True)
    pmf = np.array([0.0] + pmf)
    if pmf.sum() == 0:
        pmf[1] = 1.0
    pmf /= pmf.sum()
    Q = build_aux_kernel(EnvState(0, pmf), SymmetricIndependent(P)).exact
    assert np.all(Q >= 0)
    np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(Q, P, atol=1e-12)


def test_environment_spec_states_validated_by_gallery():
    spec = EnvironmentSpec.constant(EnvState(0, [0, 1]))
    assert spec.reversible_checked
