"""Belief-equivalence partitions of augmented states and the quotient MDPs they induce."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dhrl.augment import AugmentedMdp
from dhrl.mdp import FiniteMdp, TabularPolicy

BELIEF_TOL = 1e-12


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance, ``0.5 * ||p - q||_1``."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True, eq=False)
class StatePartition:
    block_of: np.ndarray
    num_blocks: int
    representatives: tuple[int, ...]
    epsilon: float = 0.0

    def __post_init__(self):
        block_of = np.asarray(self.block_of, dtype=np.int64).copy()
        block_of.setflags(write=False)
        object.__setattr__(self, "block_of", block_of)
        counts = np.bincount(block_of, minlength=self.num_blocks) if block_of.size else np.zeros(0)
        if block_of.size and (block_of.min() < 0 or block_of.max() >= self.num_blocks):
            raise ValueError("block indices must lie in [0, num_blocks)")
        if np.any(counts == 0):
            raise ValueError("every block must be nonempty")
        if len(self.representatives) != self.num_blocks:
            raise ValueError("need one representative per block")
        for b, r in enumerate(self.representatives):
            if block_of[r] != b:
                raise ValueError(f"representative {r} is not a member of block {b}")

    @classmethod
    def from_labels(cls, labels, epsilon: float = 0.0) -> "StatePartition":
        """Renumber arbitrary labels densely in order of first appearance."""
        remap: dict[int, int] = {}
        reps = []
        block_of = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            lab = int(lab)
            if lab not in remap:
                remap[lab] = len(remap)
                reps.append(i)
            block_of[i] = remap[lab]
        return cls(block_of, len(remap), tuple(reps), epsilon)

    @classmethod
    def singletons(cls, n: int) -> "StatePartition":
        return cls(np.arange(n), n, tuple(range(n)), 0.0)

    @property
    def num_states(self) -> int:
        return len(self.block_of)

    def members(self, block: int) -> np.ndarray:
        return np.flatnonzero(self.block_of == block)

    def blocks(self) -> list[np.ndarray]:
        return [self.members(b) for b in range(self.num_blocks)]

    def same_as(self, other: "StatePartition") -> bool:
        """Equality up to block renumbering."""
        a = StatePartition.from_labels(self.block_of)
        b = StatePartition.from_labels(other.block_of)
        return np.array_equal(a.block_of, b.block_of)

    def indicator(self) -> np.ndarray:
        """``(num_states, num_blocks)`` membership matrix."""
        m = np.zeros((self.num_states, self.num_blocks))
        m[np.arange(self.num_states), self.block_of] = 1.0
        return m


def _leader_clustering(beliefs: np.ndarray, close) -> tuple[np.ndarray, list[int]]:
    block_of = np.empty(len(beliefs), dtype=np.int64)
    reps: list[int] = []
    for i, b in enumerate(beliefs):
        for k, r in enumerate(reps):
            if close(b, beliefs[r]):
                block_of[i] = k
                break
        else:
            block_of[i] = len(reps)
            reps.append(i)
    return block_of, reps


def exact_partition(aug: AugmentedMdp, tol: float = BELIEF_TOL) -> StatePartition:
    """Group augmented states whose beliefs agree entrywise within ``tol``."""
    block_of, reps = _leader_clustering(
        aug.beliefs, lambda b, r: float(np.max(np.abs(b - r))) <= tol
    )
    return StatePartition(block_of, len(reps), tuple(reps), 0.0)


def epsilon_partition(aug: AugmentedMdp, epsilon: float, tol: float = BELIEF_TOL) -> StatePartition:
    """Greedy radius-``epsilon/2`` clustering of beliefs in canonical order.

    A state joins the first block whose representative is within TV distance
    ``epsilon / 2`` (or equal within ``tol`` entrywise), else it starts a new
    block. Members of a block are then pairwise within ``epsilon``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    radius = epsilon / 2.0

    def close(b, r):
        return tv_distance(b, r) <= radius or float(np.max(np.abs(b - r))) <= tol

    block_of, reps = _leader_clustering(aug.beliefs, close)
    return StatePartition(block_of, len(reps), tuple(reps), float(epsilon))


# --- certificates -----------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    name: str
    passed: bool
    tol: float
    max_violation: float
    # (x, x_prime, action) or (x, x_prime, action, target_block); None when vacuous
    witness: tuple | None = None

    def to_dict(self) -> dict:
        return {
            "certificate": self.name,
            "passed": self.passed,
            "tol": self.tol,
            "max_violation": self.max_violation,
            "witness": list(self.witness) if self.witness is not None else None,
        }


def _spread(values: np.ndarray, members: np.ndarray):
    """max - min over members along axis 0, plus the argmax/argmin member ids."""
    sub = values[members]
    hi = sub.argmax(axis=0)
    lo = sub.argmin(axis=0)
    spread = sub.max(axis=0) - sub.min(axis=0)
    return spread, members[hi], members[lo]


def check_reward_respecting(aug: AugmentedMdp, part: StatePartition, tol: float = 1e-10) -> Certificate:
    worst, witness = 0.0, None
    for members in part.blocks():
        if len(members) < 2:
            continue
        spread, hi, lo = _spread(aug.reward, members)
        a = int(spread.argmax())
        if spread[a] > worst:
            worst, witness = float(spread[a]), (int(hi[a]), int(lo[a]), a)
    return Certificate("reward-respecting", worst <= tol, tol, worst, witness)


def block_masses(aug: AugmentedMdp, part: StatePartition) -> np.ndarray:
    """``mass[x, a, G] = sum_{y in G} P(y | x, a)``."""
    return aug.transition @ part.indicator()


def check_ssp(aug: AugmentedMdp, part: StatePartition, tol: float = 1e-10) -> Certificate:
    mass = block_masses(aug, part)
    worst, witness = 0.0, None
    for members in part.blocks():
        if len(members) < 2:
            continue
        spread, hi, lo = _spread(mass, members)
        a, g = np.unravel_index(int(spread.argmax()), spread.shape)
        if spread[a, g] > worst:
            worst, witness = float(spread[a, g]), (int(hi[a, g]), int(lo[a, g]), int(a), int(g))
    return Certificate("ssp", worst <= tol, tol, worst, witness)


# --- quotient and lifting ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class HomomorphismMap:
    """State map onto blocks; the action map is the identity."""

    partition: StatePartition
    num_actions: int

    @property
    def f_x(self) -> np.ndarray:
        return self.partition.block_of

    @property
    def g_x(self) -> np.ndarray:
        return np.arange(self.num_actions)

    @property
    def num_abstract_states(self) -> int:
        return self.partition.num_blocks


@dataclass(frozen=True, eq=False)
class AbstractMdp:
    mdp: FiniteMdp
    hom: HomomorphismMap
    weights: np.ndarray  # per augmented state, sums to 1 inside each block
    weighting: str = "uniform"


def aggregation_weights(part: StatePartition, state_weights=None) -> np.ndarray:
    """Normalize nonnegative per-state weights within each block (uniform when None)."""
    n = part.num_states
    w = np.ones(n) if state_weights is None else np.asarray(state_weights, dtype=float).copy()
    if w.shape != (n,) or np.any(w < 0):
        raise ValueError("state weights must be a nonnegative vector over augmented states")
    totals = np.bincount(part.block_of, weights=w, minlength=part.num_blocks)
    if np.any(totals <= 0):
        raise ValueError("every block needs positive total weight")
    return w / totals[part.block_of]


def quotient(aug: AugmentedMdp, part: StatePartition, state_weights=None) -> tuple[AbstractMdp, HomomorphismMap]:
    """Weighted-average abstract MDP over the blocks of ``part`` with identity action map."""
    if part.num_states != aug.num_states:
        raise ValueError("partition does not cover the augmented state space")
    w = aggregation_weights(part, state_weights)
    ind = part.indicator()
    weighted = ind * w[:, None]  # (X, B), columns are block distributions
    reward = weighted.T @ aug.reward
    mass = block_masses(aug, part)  # (X, A, B)
    trans = np.einsum("xb,xac->bac", weighted, mass)
    hom = HomomorphismMap(part, aug.num_actions)
    abstract = AbstractMdp(
        mdp=FiniteMdp(trans, reward, aug.discount),
        hom=hom,
        weights=w,
        weighting="uniform" if state_weights is None else "custom",
    )
    return abstract, hom


def lift_policy(abstract_policy: TabularPolicy, hom: HomomorphismMap) -> TabularPolicy:
    if abstract_policy.probs.shape != (hom.num_abstract_states, hom.num_actions):
        raise ValueError(
            f"abstract policy shape {abstract_policy.probs.shape} does not match "
            f"({hom.num_abstract_states}, {hom.num_actions})"
        )
    # identity action map: every preimage has size one
    return TabularPolicy(abstract_policy.probs[hom.f_x])


def visitation_weights(aug: AugmentedMdp, policy: TabularPolicy | None = None, horizon: int = 200) -> np.ndarray:
    """Discounted occupancy from a uniform start under ``policy`` (uniform random by default).

    Alternative aggregation weights for :func:`quotient`; states never visited
    get a small floor so every block keeps positive mass.
    """
    if policy is None:
        policy = TabularPolicy.uniform(aug.num_states, aug.num_actions)
    p_pi = np.einsum("sa,sat->st", policy.probs, aug.transition)
    d = np.full(aug.num_states, 1.0 / aug.num_states)
    occ = np.zeros(aug.num_states)
    g = 1.0
    for _ in range(horizon):
        occ += g * d
        d = d @ p_pi
        g *= aug.discount
    return occ + 1e-12
