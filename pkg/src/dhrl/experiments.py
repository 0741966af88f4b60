"""Pipeline glue shared by the CLI, the scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dhrl.abstraction import (
    epsilon_partition,
    exact_partition,
    lift_policy,
    quotient,
)
from dhrl.augment import augment
from dhrl.guarantees import compression_report, value_loss_report
from dhrl.mdp import (
    FiniteMdp,
    LearningRate,
    MdpEnv,
    greedy_policy,
    policy_evaluation,
    q_learning,
    value_iteration,
)


@dataclass(frozen=True)
class Pipeline:
    """Everything derived from one (base MDP, delay, epsilon) cell."""

    base: FiniteMdp
    delay: int
    epsilon: float | None
    aug: object
    partition: object
    abstract: object
    hom: object


def build_pipeline(base: FiniteMdp, delay: int, epsilon: float | None = None, max_states: int = 10**6) -> Pipeline:
    """Augment, partition (exactly when ``epsilon`` is None) and quotient."""
    aug = augment(base, delay, max_states=max_states)
    part = exact_partition(aug) if epsilon is None else epsilon_partition(aug, epsilon)
    abstract, hom = quotient(aug, part)
    return Pipeline(base, delay, epsilon, aug, part, abstract, hom)


def lifted_optimal_policy(p: Pipeline, tol: float = 1e-12):
    sol = value_iteration(p.abstract.mdp, tol=tol)
    return lift_policy(greedy_policy(sol.q), p.hom), sol


def reachable_blocks(p: Pipeline) -> np.ndarray:
    """Blocks reachable in the abstract MDP from the images of all augmented states."""
    P = p.abstract.mdp.transition
    seen = np.zeros(p.hom.num_abstract_states, dtype=bool)
    frontier = list(np.unique(p.hom.f_x))
    seen[frontier] = True
    while frontier:
        b = frontier.pop()
        for nxt in np.flatnonzero(P[b].sum(axis=0) > 0):
            if not seen[nxt]:
                seen[nxt] = True
                frontier.append(int(nxt))
    return np.flatnonzero(seen)


@dataclass(frozen=True)
class QLearnSettings:
    epsilon: float = 0.1
    lr_scale: float = 0.5
    lr_tau: float = 1000.0
    horizon: int = 50
    check_every: int = 50
    max_steps: int = 200_000
    target_fraction: float = 0.05


def steps_to_target(mdp: FiniteMdp, seed: int, settings: QLearnSettings = QLearnSettings()) -> int | None:
    """Q-learning steps until the greedy policy is within ``target_fraction * range(V*)`` of optimal.

    Sub-optimality is measured exactly (policy evaluation) in sup-norm every
    ``check_every`` steps. Returns None if the target is not met within
    ``max_steps``.
    """
    v_star = value_iteration(mdp, tol=1e-12).v
    threshold = settings.target_fraction * float(v_star.max() - v_star.min())
    env_seed, agent_seed = np.random.SeedSequence(seed).spawn(2)
    env = MdpEnv(mdp, np.random.default_rng(env_seed), horizon=settings.horizon)
    hit: list[int] = []
    gaps: dict[bytes, float] = {}

    def check(steps_done, q):
        actions = np.argmax(q, axis=1)
        key = actions.tobytes()
        if key not in gaps:
            v = policy_evaluation(mdp, greedy_policy(q), tol=1e-8)
            gaps[key] = float(np.max(v_star - v))
        if gaps[key] <= threshold + 1e-12:
            hit.append(steps_done)
            return True
        return False

    if check(0, np.zeros((mdp.num_states, mdp.num_actions))):
        return 0
    q_learning(
        env,
        settings.max_steps,
        learning_rate=LearningRate(settings.lr_scale, settings.lr_tau),
        epsilon=settings.epsilon,
        seed=int(agent_seed.generate_state(1)[0]),
        callback=check,
        callback_every=settings.check_every,
    )
    return hit[0] if hit else None


def canonical_block_order(p: Pipeline) -> FiniteMdp:
    """The abstract MDP with blocks sorted by their representative beliefs.

    Block numbers otherwise follow the canonical order of augmented states,
    which changes with the delay; sorting by belief gives one labeling for
    every delay (for deterministic bases, block ``i`` is the base state ``i``
    in the image of the rollout map).
    """
    reps = np.array(p.partition.representatives)
    beliefs = p.aug.beliefs[reps]
    order = sorted(range(len(reps)), key=lambda b: tuple(-beliefs[b]))
    P = p.abstract.mdp.transition[order][:, :, order]
    R = p.abstract.mdp.reward[order]
    return FiniteMdp(P, R, p.abstract.mdp.discount)


def pipeline_summary(p: Pipeline, tol: float = 1e-12) -> dict:
    comp = compression_report(p.aug, p.hom)
    loss = value_loss_report(p.aug, p.abstract, p.hom, tol=tol)
    return {"compression": comp, "loss": loss}


@dataclass(frozen=True)
class FidelityReport:
    """Empirical reward and next-state frequencies from emitted records versus the analytic kernel.

    Each (x, a) pair with at least ``min_visits`` records is compared; a
    deviation is measured in standard errors of the analytic distribution.
    Zero-variance cells must match exactly (deviation ``inf`` otherwise).
    """

    records: int
    pairs_checked: int
    min_visits: int
    max_reward_z: float
    max_transition_z: float
    z_limit: float

    @property
    def holds(self) -> bool:
        return self.max_reward_z <= self.z_limit and self.max_transition_z <= self.z_limit

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["holds"] = self.holds
        return d


def _z(diff: np.ndarray, var: np.ndarray, n) -> np.ndarray:
    se = np.sqrt(np.maximum(var, 0.0) / n)
    z = np.zeros_like(diff)
    exact = se <= 1e-15
    z[~exact] = np.abs(diff[~exact]) / se[~exact]
    z[exact & (np.abs(diff) > 1e-12)] = np.inf
    return z


def record_fidelity(aug, records, z_limit: float = 3.0, min_visits: int = 1) -> FidelityReport:
    X, A = aug.num_states, aug.num_actions
    n = np.zeros((X, A))
    r_sum = np.zeros((X, A))
    nxt = np.zeros((X, A, X))
    for rec in records:
        i, a = aug.index_of(rec.x_t), rec.a_t
        n[i, a] += 1
        r_sum[i, a] += rec.r_tilde
        nxt[i, a, aug.index_of(rec.x_next)] += 1
    base_r = aug.base.reward
    max_rz = max_pz = 0.0
    checked = 0
    for i in range(X):
        b = aug.beliefs[i]
        for a in range(A):
            if n[i, a] < min_visits or n[i, a] == 0:
                continue
            checked += 1
            mean = aug.reward[i, a]
            var_r = float(b @ base_r[:, a] ** 2 - mean**2)
            rz = _z(np.array([r_sum[i, a] / n[i, a] - mean]), np.array([var_r]), n[i, a])
            p = aug.transition[i, a]
            pz = _z(nxt[i, a] / n[i, a] - p, p * (1 - p), n[i, a])
            max_rz = max(max_rz, float(rz.max()))
            max_pz = max(max_pz, float(pz.max()))
    visited = n[n > 0]
    return FidelityReport(
        records=len(records),
        pairs_checked=checked,
        min_visits=int(visited.min()) if visited.size else 0,
        max_reward_z=max_rz,
        max_transition_z=max_pz,
        z_limit=z_limit,
    )
