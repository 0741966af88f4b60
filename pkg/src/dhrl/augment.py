"""Reduction of a constant-delay MDP to a regular MDP over ``S x A^delay``.

Augmented states are ``(s, (a_1, ..., a_delay))``: the last observed state and
the actions executed since, oldest first. Index order is lexicographic, so
``index = s * |A|**delay + sum_i a_i * |A|**(delay - i)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from dhrl.mdp import ROW_SUM_TOL, FiniteMdp, InvalidMdpError

DEFAULT_STATE_CAP = 10**6


class CapacityError(ValueError):
    """Augmented state space larger than the configured cap."""


@dataclass(frozen=True)
class AugmentedState:
    base_state: int
    action_history: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "base_state", int(self.base_state))
        object.__setattr__(self, "action_history", tuple(int(a) for a in self.action_history))

    @property
    def delay(self) -> int:
        return len(self.action_history)

    def shifted(self, next_state: int, action: int) -> "AugmentedState":
        """Successor after the oldest action resolves to ``next_state`` and ``action`` is queued."""
        if not self.action_history:
            return AugmentedState(next_state, ())
        return AugmentedState(next_state, self.action_history[1:] + (int(action),))


def _check_state(base: FiniteMdp, x: AugmentedState, delay: int | None = None):
    if not 0 <= x.base_state < base.num_states:
        raise IndexError(f"base state {x.base_state} out of range [0, {base.num_states})")
    for a in x.action_history:
        if not 0 <= a < base.num_actions:
            raise IndexError(f"action {a} out of range [0, {base.num_actions})")
    if delay is not None and x.delay != delay:
        raise IndexError(f"history length {x.delay} does not match delay {delay}")


def _check_action(base: FiniteMdp, a: int):
    if not 0 <= a < base.num_actions:
        raise IndexError(f"action {a} out of range [0, {base.num_actions})")


def belief(base: FiniteMdp, x: AugmentedState) -> np.ndarray:
    """Distribution of the current state: the Dirac at ``x.base_state`` pushed through the history."""
    _check_state(base, x)
    b = np.zeros(base.num_states)
    b[x.base_state] = 1.0
    for a in x.action_history:
        b = b @ base.transition[:, a, :]
    return b


def augmented_reward(base: FiniteMdp, x: AugmentedState, a: int) -> float:
    _check_action(base, a)
    return float(belief(base, x) @ base.reward[:, a])


def augmented_transition_row(base: FiniteMdp, x: AugmentedState, a: int) -> dict[AugmentedState, float]:
    """Sparse successor distribution of ``x`` under action ``a``."""
    _check_state(base, x)
    _check_action(base, a)
    oldest = x.action_history[0] if x.action_history else a
    row = base.transition[x.base_state, oldest]
    return {x.shifted(s_next, a): float(row[s_next]) for s_next in np.flatnonzero(row > 0)}


def deterministic_rollout(base: FiniteMdp, x: AugmentedState) -> int:
    """The state a deterministic base reaches from ``x.base_state`` along the history."""
    _check_state(base, x)
    succ = base.successor()
    s = x.base_state
    for a in x.action_history:
        s = int(succ[s, a])
    return s


def belief_update(base: FiniteMdp, b: np.ndarray, a: int) -> np.ndarray:
    """One-step forward update of a belief under action ``a``."""
    return b @ base.transition[:, a, :]


@dataclass(frozen=True, eq=False)
class AugmentedMdp:
    """Fully materialized regular MDP for a base MDP with constant delay."""

    base: FiniteMdp
    delay: int
    mdp: FiniteMdp
    beliefs: np.ndarray

    @property
    def num_states(self) -> int:
        return self.mdp.num_states

    @property
    def num_actions(self) -> int:
        return self.mdp.num_actions

    @property
    def transition(self) -> np.ndarray:
        return self.mdp.transition

    @property
    def reward(self) -> np.ndarray:
        return self.mdp.reward

    @property
    def discount(self) -> float:
        return self.mdp.discount

    @property
    def history_count(self) -> int:
        return self.base.num_actions**self.delay

    def index_of(self, x: AugmentedState) -> int:
        _check_state(self.base, x, self.delay)
        h = 0
        for a in x.action_history:
            h = h * self.base.num_actions + a
        return x.base_state * self.history_count + h

    def state_at(self, index: int) -> AugmentedState:
        if not 0 <= index < self.num_states:
            raise IndexError(f"augmented index {index} out of range")
        s, h = divmod(int(index), self.history_count)
        hist = []
        for _ in range(self.delay):
            h, a = divmod(h, self.base.num_actions)
            hist.append(a)
        return AugmentedState(s, tuple(reversed(hist)))

    @cached_property
    def states(self) -> tuple[AugmentedState, ...]:
        return tuple(self.state_at(i) for i in range(self.num_states))

    def rollout_map(self) -> np.ndarray:
        """``F_delay``: augmented index -> the state its Dirac belief sits on (deterministic bases only)."""
        if not self.base.is_deterministic():
            raise InvalidMdpError("rollout map requires a deterministic base kernel")
        return self.beliefs.argmax(axis=1)


def augment(base: FiniteMdp, delay: int, max_states: int = DEFAULT_STATE_CAP) -> AugmentedMdp:
    """Build ``M_delay`` with canonical lexicographic state ordering."""
    if delay < 0:
        raise ValueError("delay must be nonnegative")
    S, A = base.num_states, base.num_actions
    K = A**delay
    n = S * K
    if n > max_states:
        raise CapacityError(f"|X| = {S}*{A}^{delay} = {n} exceeds the cap of {max_states} augmented states")

    # beliefs for histories of growing length; appending action a maps h -> h*A + a
    beliefs = np.eye(S)
    for _ in range(delay):
        stacked = np.stack([beliefs @ base.transition[:, a, :] for a in range(A)], axis=1)
        beliefs = stacked.reshape(-1, S)

    idx = np.arange(n)
    s_of = idx // K
    h_of = idx % K
    oldest = h_of // (K // A) if delay else None
    tail = h_of % (K // A) if delay else None

    P = np.zeros((n, A, n))
    for a in range(A):
        if delay == 0:
            P[:, a, :] = base.transition[:, a, :]
            continue
        rows = base.transition[s_of, oldest, :]  # (n, S)
        cols = np.arange(S)[None, :] * K + (tail * A + a)[:, None]
        P[idx[:, None], a, cols] = rows
    R = beliefs @ base.reward
    mdp = FiniteMdp(P, R, base.discount)
    beliefs.setflags(write=False)
    return AugmentedMdp(base=base, delay=delay, mdp=mdp, beliefs=beliefs)


def check_shift_structure(aug: AugmentedMdp, tol: float = ROW_SUM_TOL) -> list[tuple[int, int, int]]:
    """(x, a, y) triples with mass on a successor that breaks the history-shift rule."""
    bad = []
    for i, x in enumerate(aug.states):
        for a in range(aug.num_actions):
            for j in np.flatnonzero(aug.transition[i, a] > tol):
                y = aug.states[j]
                if y.action_history != x.shifted(y.base_state, a).action_history:
                    bad.append((i, a, int(j)))
    return bad
