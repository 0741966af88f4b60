"""Finite MDPs, tabular policies and the exact solvers used as oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

ROW_SUM_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver exhausts its iteration budget."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class InvalidMdpError(ValueError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """A finite MDP with a dense kernel ``transition[s, a, s']`` and reward ``reward[s, a]``.

    Construction does not validate; call :func:`validate_mdp` (or
    :meth:`checked`) when the source is untrusted.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "discount", float(self.discount))
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise InvalidMdpError(f"transition must have shape (S, A, S), got {self.transition.shape}")
        if self.reward.shape != self.transition.shape[:2]:
            raise InvalidMdpError(
                f"reward shape {self.reward.shape} does not match transition {self.transition.shape}"
            )

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    def checked(self) -> "FiniteMdp":
        problems = validate_mdp(self)
        if problems:
            raise InvalidMdpError("; ".join(str(p) for p in problems))
        return self

    def is_deterministic(self, tol: float = ROW_SUM_TOL) -> bool:
        return bool(np.all(self.transition.max(axis=2) >= 1.0 - tol))

    def successor(self) -> np.ndarray:
        """Successor table ``next[s, a]`` of a deterministic kernel."""
        if not self.is_deterministic():
            raise InvalidMdpError("successor table requested for a stochastic kernel")
        return self.transition.argmax(axis=2)

    def __eq__(self, other):
        if not isinstance(other, FiniteMdp):
            return NotImplemented
        return (
            self.discount == other.discount
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
        )

    __hash__ = None


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    index: tuple = ()

    def __str__(self):
        where = f" at {self.index}" if self.index else ""
        return f"{self.kind}{where}: {self.detail}"


def validate_mdp(mdp: FiniteMdp, tol: float = ROW_SUM_TOL) -> list[Violation]:
    """List every invariant violation of ``mdp``; an empty list means valid."""
    problems = []
    P, R = mdp.transition, mdp.reward
    if np.any(~np.isfinite(P)):
        for idx in zip(*np.nonzero(~np.isfinite(P))):
            problems.append(Violation("non-finite-probability", "transition entry is not finite", tuple(map(int, idx))))
    if np.any(P < 0):
        for idx in zip(*np.nonzero(P < 0)):
            problems.append(Violation("negative-probability", f"P={P[idx]!r}", tuple(map(int, idx))))
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(~(np.abs(sums - 1.0) <= tol))):
        problems.append(Violation("row-sum", f"row sums to {sums[s, a]!r}", (int(s), int(a))))
    for s, a in zip(*np.nonzero(~np.isfinite(R))):
        problems.append(Violation("non-finite-reward", f"R={R[s, a]!r}", (int(s), int(a))))
    if not (0.0 <= mdp.discount < 1.0) or not np.isfinite(mdp.discount):
        problems.append(Violation("discount", f"discount {mdp.discount!r} outside [0, 1)"))
    return problems


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic table ``probs[state, action]``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ValueError(f"policy table must be 2-D, got shape {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("policy rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def deterministic(cls, actions, num_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((len(actions), num_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all(self.probs.max(axis=1) == 1.0))

    def actions(self) -> np.ndarray:
        """Most likely action per state (the action for deterministic policies)."""
        return self.probs.argmax(axis=1)

    def __eq__(self, other):
        if not isinstance(other, TabularPolicy):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None


@dataclass(frozen=True)
class SolveResult:
    v: np.ndarray
    q: np.ndarray
    iterations: int
    residual: float


def bellman_q(mdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.discount * (mdp.transition @ v)


def value_iteration(mdp: FiniteMdp, tol: float = 1e-10, max_iters: int = 100_000) -> SolveResult:
    """Value iteration until the sup-norm Bellman residual is at most ``tol``.

    The returned ``v`` is ``q.max(axis=1)`` exactly and ``residual`` is
    ``max |v - v_prev|`` for the final sweep.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.num_states)
    residual = np.inf
    for it in range(1, max_iters + 1):
        q = bellman_q(mdp, v)
        v_new = q.max(axis=1)
        residual = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        v = v_new
        if residual <= tol:
            return SolveResult(v=v, q=q, iterations=it, residual=residual)
    raise ConvergenceError("value iteration did not converge", residual, max_iters)


def residual_trace(mdp: FiniteMdp, iters: int) -> np.ndarray:
    """Sup-norm residuals of the first ``iters`` value-iteration sweeps from zero."""
    v = np.zeros(mdp.num_states)
    out = np.empty(iters)
    for i in range(iters):
        v_new = bellman_q(mdp, v).max(axis=1)
        out[i] = np.max(np.abs(v_new - v))
        v = v_new
    return out


def _policy_model(mdp: FiniteMdp, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    if policy.probs.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.num_states}, {mdp.num_actions})"
        )
    p_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r_pi = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    return p_pi, r_pi


def policy_evaluation(mdp: FiniteMdp, policy: TabularPolicy, tol: float = 1e-10) -> np.ndarray:
    """Exact ``V^pi`` from the linear system ``(I - gamma P_pi) v = r_pi``."""
    p_pi, r_pi = _policy_model(mdp, policy)
    n = mdp.num_states
    v = np.linalg.solve(np.eye(n) - mdp.discount * p_pi, r_pi)
    residual = float(np.max(np.abs(r_pi + mdp.discount * p_pi @ v - v))) if n else 0.0
    if residual > tol:
        raise ConvergenceError("policy evaluation linear solve inaccurate", residual, 1)
    return v


def greedy_policy(q: np.ndarray) -> TabularPolicy:
    """Deterministic argmax policy; ties go to the lowest action index."""
    q = np.asarray(q, dtype=float)
    return TabularPolicy.deterministic(np.argmax(q, axis=1), q.shape[1])


# --- Q-learning -------------------------------------------------------------


class StepEnv(Protocol):
    num_states: int
    num_actions: int

    def reset(self) -> int: ...

    def step(self, action: int) -> tuple[int, float, bool]: ...


class MdpEnv:
    """Sampling interface over a :class:`FiniteMdp`.

    Episodes start from a uniformly drawn state (or ``start``) and end after
    ``horizon`` steps when a horizon is given.
    """

    def __init__(self, mdp: FiniteMdp, rng: np.random.Generator, horizon: int | None = None, start: int | None = None):
        self.mdp = mdp
        self.rng = rng
        self.horizon = horizon
        self.start = start
        self.num_states = mdp.num_states
        self.num_actions = mdp.num_actions
        self._cdf = np.cumsum(mdp.transition, axis=2)
        self._state = None
        self._t = 0

    def reset(self) -> int:
        self._t = 0
        if self.start is None:
            self._state = int(self.rng.integers(self.num_states))
        else:
            self._state = self.start
        return self._state

    def step(self, action: int) -> tuple[int, float, bool]:
        s = self._state
        r = float(self.mdp.reward[s, action])
        cdf = self._cdf[s, action]
        nxt = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
        self._state = min(nxt, self.num_states - 1)
        self._t += 1
        done = self.horizon is not None and self._t >= self.horizon
        return self._state, r, done


@dataclass(frozen=True)
class LearningRate:
    """``alpha_t = scale / (1 + t / tau)``."""

    scale: float = 0.5
    tau: float = 1000.0

    def __call__(self, t: int) -> float:
        return self.scale / (1.0 + t / self.tau)


def q_learning(
    env: StepEnv,
    steps: int,
    learning_rate: Callable[[int], float] = LearningRate(),
    epsilon: float = 0.1,
    seed: int = 0,
    discount: float | None = None,
    callback: Callable[[int, np.ndarray], bool] | None = None,
    callback_every: int = 0,
) -> np.ndarray:
    """Tabular epsilon-greedy Q-learning from an all-zero table.

    Exactly ``steps`` environment transitions are taken. ``discount`` defaults
    to the wrapped MDP's discount. When ``callback`` is given it is called
    with ``(steps_done, q)`` every ``callback_every`` steps and may return
    True to stop early.
    """
    rng = np.random.default_rng(seed)
    if discount is None:
        discount = env.mdp.discount
    q = np.zeros((env.num_states, env.num_actions))
    s = env.reset()
    for t in range(steps):
        if rng.random() < epsilon:
            a = int(rng.integers(env.num_actions))
        else:
            a = int(np.argmax(q[s]))
        s_next, r, done = env.step(a)
        target = r + discount * q[s_next].max()
        q[s, a] += learning_rate(t) * (target - q[s, a])
        s = env.reset() if done else s_next
        if callback is not None and callback_every and (t + 1) % callback_every == 0:
            if callback(t + 1, q):
                break
    return q
