import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhrl.abstraction import StatePartition, epsilon_partition, exact_partition, quotient
from dhrl.augment import augment
from dhrl.envs import make_flip, make_random_mdp
from dhrl.guarantees import (
    compression_report,
    delay_free_coincidence,
    reward_discrepancy_c1,
    reward_range_xi,
    sample_complexity_formula,
    transition_discrepancy_c2,
    value_loss_bound,
    value_loss_report,
)
from dhrl.mdp import FiniteMdp

from oracles import naive_c1, naive_c2


def exact(base, delay):
    aug = augment(base, delay)
    abstract, hom = quotient(aug, exact_partition(aug))
    return aug, abstract, hom


def approx(base, delay, eps):
    aug = augment(base, delay)
    abstract, hom = quotient(aug, epsilon_partition(aug, eps))
    return aug, abstract, hom


def singletons(base, delay):
    aug = augment(base, delay)
    abstract, hom = quotient(aug, StatePartition.singletons(aug.num_states))
    return aug, abstract, hom


@pytest.mark.parametrize(
    "delay, n_aug, n_abs, zeta, bound",
    [(0, 2, 2, 1.0, 1.0), (1, 4, 2, 0.5, 0.5), (2, 8, 2, 0.25, 0.25)],
)
def test_compression_flip(delay, n_aug, n_abs, zeta, bound):
    aug, _, hom = exact(make_flip(), delay)
    rep = compression_report(aug, hom)
    assert (rep.num_augmented, rep.num_abstract, rep.zeta, rep.bound) == (n_aug, n_abs, zeta, bound)
    assert rep.base_states == 2 and rep.holds


def test_c1_examples():
    assert reward_discrepancy_c1(*exact(make_random_mdp(4, 2, 3), 2)) <= 1e-12
    # block means 0.1 and 0.9 of augmented rewards {0, 0.2} and {0.8, 1}
    assert reward_discrepancy_c1(*approx(make_flip(0.8), 1, 0.5)) == pytest.approx(0.1, abs=1e-12)
    assert reward_discrepancy_c1(*singletons(make_random_mdp(3, 2, 1, deterministic=False), 2)) == 0


def test_c2_examples():
    assert transition_discrepancy_c2(*exact(make_random_mdp(4, 2, 3), 2)) <= 1e-12
    assert transition_discrepancy_c2(*singletons(make_random_mdp(3, 2, 1, deterministic=False), 2)) == 0
    aug, abstract, hom = approx(make_flip(0.8), 1, 0.5)
    c2 = transition_discrepancy_c2(aug, abstract, hom)
    assert c2 > 0
    assert c2 == pytest.approx(naive_c2(aug.transition, abstract.mdp.transition, hom.f_x), abs=1e-14)
    # state (s0,[stay]) keeps block 0 surely; the block average is 0.9, so |1-.9| + |0-.1|
    assert c2 == pytest.approx(0.2, abs=1e-12)


def test_xi_examples():
    base = make_random_mdp(3, 2, 0)
    flat = FiniteMdp(base.transition, np.full((3, 2), 0.7), 0.9)
    assert reward_range_xi(exact(flat, 1)[1]) == 0
    assert reward_range_xi(exact(make_flip(), 1)[1]) == 1.0
    assert reward_range_xi(approx(make_flip(0.8), 1, 0.5)[1]) == pytest.approx(0.8, abs=1e-12)


def test_value_loss_exact_and_singleton():
    rep = value_loss_report(*exact(make_random_mdp(5, 2, 4), 2))
    assert rep.c1 <= 1e-12 and rep.c2 <= 1e-12
    assert rep.bound <= 1e-9 and rep.measured <= 1e-9 and rep.holds
    rep = value_loss_report(*singletons(make_random_mdp(3, 2, 1, deterministic=False), 1))
    assert rep.bound == 0 and rep.measured <= 1e-9


def test_value_loss_slip_flip():
    rep = value_loss_report(*approx(make_flip(0.8), 1, 0.5))
    assert 0 <= rep.measured <= rep.bound
    assert rep.bound == pytest.approx(value_loss_bound(rep.c1, rep.c2, rep.xi, 0.9))
    assert rep.bound == pytest.approx(2 / 0.1 * (0.1 + 0.9 * 0.8 * 0.2 / (2 * 0.1)), rel=1e-9)


def test_sample_complexity_formula():
    assert sample_complexity_formula(2, 2, 0.5, 0.5) == pytest.approx(math.log(4) * 2**7.5)
    assert sample_complexity_formula(3, 4, 1 - 1e-12, 0.0) == pytest.approx(math.log(12), rel=1e-9)
    assert "delay" not in inspect.signature(sample_complexity_formula).parameters
    with pytest.raises(ValueError):
        sample_complexity_formula(2, 2, 1.0, 0.5)
    with pytest.raises(ValueError):
        sample_complexity_formula(2, 2, 0.5, 1.0)


def test_coincidence_flip():
    rep = delay_free_coincidence(*exact(make_flip(), 2))
    assert rep.isomorphic and rep.relabel == (0, 1)


stochastic = st.tuples(st.integers(2, 5), st.integers(0, 2), st.integers(0, 10_000), st.sampled_from([0.1, 0.3, 0.5]))


@settings(max_examples=60, deadline=None)
@given(stochastic)
def test_value_loss_bound_holds(params):
    S, d, seed, eps = params
    aug, abstract, hom = approx(make_random_mdp(S, 2, seed, deterministic=False, branching=2), d, eps)
    rep = value_loss_report(aug, abstract, hom)
    assert rep.measured <= rep.bound + 1e-9
    assert rep.c1 == pytest.approx(naive_c1(aug.reward, abstract.mdp.reward, hom.f_x), abs=1e-14)
    assert rep.c2 == pytest.approx(naive_c2(aug.transition, abstract.mdp.transition, hom.f_x), abs=1e-14)


deterministic = st.tuples(st.integers(2, 6), st.integers(2, 3), st.integers(1, 3), st.integers(0, 10_000))


@settings(max_examples=100, deadline=None)
@given(deterministic)
def test_compression_bound_deterministic(params):
    S, A, d, seed = params
    aug, abstract, hom = exact(make_random_mdp(S, A, seed), d)
    rep = compression_report(aug, hom)
    assert rep.zeta <= 1 / A**d and rep.num_abstract <= S


@settings(max_examples=60, deadline=None)
@given(deterministic)
def test_exactness_gives_zero_discrepancy_and_loss(params):
    S, A, d, seed = params
    aug, abstract, hom = exact(make_random_mdp(S, A, seed), d)
    rep = value_loss_report(aug, abstract, hom)
    assert rep.c1 <= 1e-12 and rep.c2 <= 1e-12
    assert rep.measured <= 1e-9
    assert delay_free_coincidence(aug, abstract, hom).isomorphic


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4), st.integers(1, 2), st.integers(0, 10_000))
def test_zero_discrepancy_iff_definition_equalities(S, d, seed):
    # exact partitions of stochastic bases may or may not satisfy the equalities;
    # C1 = C2 = 0 must coincide with the certificates passing
    from dhrl.abstraction import check_reward_respecting, check_ssp

    aug, abstract, hom = exact(make_random_mdp(S, 2, seed, deterministic=False, branching=2), d)
    zero = reward_discrepancy_c1(aug, abstract, hom) <= 1e-12 and transition_discrepancy_c2(aug, abstract, hom) <= 1e-12
    certified = check_reward_respecting(aug, hom.partition, 1e-12).passed and check_ssp(aug, hom.partition, 1e-12).passed
    assert zero == certified
    if zero:
        assert value_loss_report(aug, abstract, hom).measured <= 1e-9


def test_discrepancies_grow_with_epsilon_on_slip_flip():
    # reported, not a theorem: larger eps merges more and never shrinks C1, C2 on this family
    for success in (0.6, 0.8, 0.9):
        rows = []
        for eps in (0.0, 0.3, 0.5, 0.9):
            aug, abstract, hom = approx(make_flip(success), 1, eps)
            rows.append((hom.num_abstract_states, reward_discrepancy_c1(aug, abstract, hom), transition_discrepancy_c2(aug, abstract, hom)))
        blocks = [r[0] for r in rows]
        assert blocks == sorted(blocks, reverse=True)
        for (_, c1a, c2a), (_, c1b, c2b) in zip(rows, rows[1:]):
            assert c1b >= c1a - 1e-12 and c2b >= c2a - 1e-12
