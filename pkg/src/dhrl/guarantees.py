"""Quantities certifying the abstraction: compression ratio and the value-loss bound."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from dhrl.abstraction import AbstractMdp, HomomorphismMap, block_masses, lift_policy
from dhrl.augment import AugmentedMdp
from dhrl.mdp import greedy_policy, policy_evaluation, value_iteration

BOUND_SLACK = 1e-9


@dataclass(frozen=True)
class CompressionReport:
    num_augmented: int
    num_abstract: int
    zeta: float
    bound: float
    base_states: int
    deterministic: bool

    @property
    def holds(self) -> bool:
        """Deterministic-base claim: ``zeta <= 1/|A|^delay`` and ``|X_bar| <= |S|``."""
        if not self.deterministic:
            return True
        return self.zeta <= self.bound and self.num_abstract <= self.base_states


def compression_report(aug: AugmentedMdp, hom: HomomorphismMap) -> CompressionReport:
    n_abs = hom.num_abstract_states
    return CompressionReport(
        num_augmented=aug.num_states,
        num_abstract=n_abs,
        zeta=n_abs / aug.num_states,
        bound=1.0 / aug.base.num_actions**aug.delay,
        base_states=aug.base.num_states,
        deterministic=aug.base.is_deterministic(),
    )


def reward_discrepancy_c1(aug: AugmentedMdp, abstract: AbstractMdp, hom: HomomorphismMap) -> float:
    """``max_{x,a} |R_delay(x, a) - R_bar(f(x), a)|``."""
    return float(np.max(np.abs(aug.reward - abstract.mdp.reward[hom.f_x])))


def transition_discrepancy_c2(aug: AugmentedMdp, abstract: AbstractMdp, hom: HomomorphismMap) -> float:
    """``max_{x,a} sum_{b'} |P_delay(block b' | x, a) - P_bar(b' | f(x), a)|``."""
    mass = block_masses(aug, hom.partition)
    diff = np.abs(mass - abstract.mdp.transition[hom.f_x])
    return float(diff.sum(axis=2).max())


def reward_range_xi(abstract: AbstractMdp) -> float:
    r = abstract.mdp.reward
    return float(r.max() - r.min())


def value_loss_bound(c1: float, c2: float, xi: float, gamma: float) -> float:
    return 2.0 / (1.0 - gamma) * (c1 + gamma * xi * c2 / (2.0 * (1.0 - gamma)))


@dataclass(frozen=True)
class ValueLossReport:
    c1: float
    c2: float
    xi: float
    gamma: float
    bound: float
    measured: float
    abstract_iterations: int

    @property
    def holds(self) -> bool:
        return self.measured <= self.bound + BOUND_SLACK

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


def value_loss_report(
    aug: AugmentedMdp,
    abstract: AbstractMdp,
    hom: HomomorphismMap,
    tol: float = 1e-12,
    max_iters: int = 100_000,
) -> ValueLossReport:
    """Solve the abstract MDP, lift its greedy policy and measure the sup-norm loss on ``aug``."""
    c1 = reward_discrepancy_c1(aug, abstract, hom)
    c2 = transition_discrepancy_c2(aug, abstract, hom)
    xi = reward_range_xi(abstract)
    gamma = aug.discount
    abs_sol = value_iteration(abstract.mdp, tol=tol, max_iters=max_iters)
    lifted = lift_policy(greedy_policy(abs_sol.q), hom)
    v_star = value_iteration(aug.mdp, tol=tol, max_iters=max_iters).v
    v_lifted = policy_evaluation(aug.mdp, lifted, tol=1e-8)
    measured = float(np.max(np.abs(v_star - v_lifted)))
    return ValueLossReport(
        c1=c1,
        c2=c2,
        xi=xi,
        gamma=gamma,
        bound=value_loss_bound(c1, c2, xi, gamma),
        measured=measured,
        abstract_iterations=abs_sol.iterations,
    )


@dataclass(frozen=True)
class CoincidenceReport:
    """Entrywise comparison of the reachable abstract MDP with the base MDP relabeled by the rollout map."""

    isomorphic: bool
    num_blocks: int
    image_size: int
    max_reward_error: float
    max_transition_error: float
    relabel: tuple[int, ...]  # block -> base state


def delay_free_coincidence(aug: AugmentedMdp, abstract: AbstractMdp, hom: HomomorphismMap, blocks=None) -> CoincidenceReport:
    """Check that the abstract MDP restricted to ``blocks`` equals the base MDP on the rollout image.

    ``blocks`` defaults to every block (all augmented states are admissible
    starts). Requires a deterministic base.
    """
    rollout = aug.rollout_map()
    part = hom.partition
    if blocks is None:
        blocks = np.arange(part.num_blocks)
    blocks = np.asarray(blocks)
    relabel = np.array([rollout[r] for r in part.representatives])
    # a block must map to exactly one base state and distinct blocks to distinct states
    consistent = all(len(set(rollout[part.members(b)])) == 1 for b in blocks)
    injective = len(set(relabel[blocks])) == len(blocks)
    states = relabel[blocks]
    r_err = float(np.max(np.abs(abstract.mdp.reward[blocks] - aug.base.reward[states]))) if len(blocks) else 0.0
    P_abs = abstract.mdp.transition[np.ix_(blocks, np.arange(aug.num_actions), blocks)]
    P_base = aug.base.transition[np.ix_(states, np.arange(aug.num_actions), states)]
    # mass leaving the restricted set must be zero on both sides
    leak = max(
        float(np.max(np.abs(1.0 - P_abs.sum(axis=2)))) if len(blocks) else 0.0,
        float(np.max(np.abs(1.0 - P_base.sum(axis=2)))) if len(blocks) else 0.0,
    )
    p_err = max(float(np.max(np.abs(P_abs - P_base))) if len(blocks) else 0.0, leak)
    return CoincidenceReport(
        isomorphic=consistent and injective and r_err <= 1e-12 and p_err <= 1e-12,
        num_blocks=len(blocks),
        image_size=len(set(rollout.tolist())),
        max_reward_error=r_err,
        max_transition_error=p_err,
        relabel=tuple(int(s) for s in relabel),
    )


def sample_complexity_formula(num_states: int, num_actions: int, eps: float, gamma: float) -> float:
    """``log(|S||A|) / (eps^2.5 (1 - gamma)^5)`` with the hidden constant set to 1."""
    if num_states < 1 or num_actions < 1:
        raise ValueError("state and action counts must be positive")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    return math.log(num_states * num_actions) / (eps**2.5 * (1.0 - gamma) ** 5)
