"""Delayed-observation interaction sessions.

Time runs ``t = 1, 2, ...``. The true state at time ``t`` is ``s_t`` and the
caller executes ``a_t`` there, earning ``r_t = R(s_t, a_t)``. Under a
constant delay ``d`` the observation available when choosing ``a_t`` is
``s_{t-d}`` (none for ``t <= d``). :meth:`DelayedEnvSession.step` executes
``a_t`` and returns what becomes visible for the next decision:
``s_{t+1-d}`` together with ``r_{t-d}``, the reward of the transition that
produced it.

Every step with ``t > 2d`` also emits the time-aligned transition
``(x_{t-d}, s_{t-d}, a_{t-d}, r_{t-d}, x_{t-d+1}, s_{t-d+1})``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from dhrl.augment import AugmentedState
from dhrl.mdp import FiniteMdp


class ProtocolViolation(RuntimeError):
    """An observation arrived later than the declared maximum delay."""


class SessionExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class FixedDelay:
    delay: int

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")

    @property
    def effective_delay(self) -> int:
        return self.delay


@dataclass(frozen=True)
class RandomDelay:
    """Independent per-observation delays; ``probs[i]`` is P(delay = i + 1)."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if not probs or any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("delay probabilities must be a nonempty distribution")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, max_delay: int) -> "RandomDelay":
        return cls(tuple([1.0 / max_delay] * max_delay))

    @classmethod
    def degenerate(cls, delay: int) -> "RandomDelay":
        return cls(tuple(1.0 if d == delay else 0.0 for d in range(1, delay + 1)))

    @property
    def support_max(self) -> int:
        return max(i + 1 for i, p in enumerate(self.probs) if p > 0)


@dataclass(frozen=True)
class ConservativeDelay:
    """Random delays padded to ``max_delay``: a constant-delay surrogate."""

    source: RandomDelay
    max_delay: int

    @property
    def effective_delay(self) -> int:
        return self.max_delay


def conservative_wrap(spec: RandomDelay, max_delay: int | None = None) -> ConservativeDelay:
    """Turn a bounded random-delay spec into a fixed ``max_delay`` spec.

    ``max_delay`` defaults to the largest delay in the distribution's support.
    Arrivals later than ``max_delay`` raise :class:`ProtocolViolation` while
    stepping.
    """
    if max_delay is None:
        max_delay = spec.support_max
    if max_delay < 1:
        raise ValueError("max_delay must be at least 1")
    return ConservativeDelay(spec, max_delay)


@dataclass(frozen=True)
class TransitionRecord:
    x_t: AugmentedState
    s_t: int
    a_t: int
    r_tilde: float
    x_next: AugmentedState
    s_next: int


@dataclass(frozen=True)
class StepOutcome:
    t: int
    action: int
    observation: int | None
    observed_index: int | None
    reward: float | None
    records: tuple[TransitionRecord, ...]
    # raw (time index, arrival age) pairs for random-delay sessions
    arrivals: tuple[tuple[int, int], ...] = ()


@dataclass
class _Slot:
    state: int | None = None
    action: int | None = None
    reward: float | None = None


class DelayedEnvSession:
    """Single-threaded delayed interaction with a finite MDP.

    ``delay_spec`` is a :class:`FixedDelay` or a :class:`ConservativeDelay`.
    A bare :class:`RandomDelay` session reports raw arrivals only (in
    ``StepOutcome.arrivals``) and never emits records.
    """

    def __init__(
        self,
        base: FiniteMdp,
        delay_spec,
        seed: int,
        horizon: int | None = None,
        initial_state: int | None = None,
    ):
        self.base = base
        self.delay_spec = delay_spec
        self.horizon = horizon
        env_seq, delay_seq = np.random.SeedSequence(seed).spawn(2)
        self.rng = np.random.default_rng(env_seq)
        self._delay_rng = np.random.default_rng(delay_seq)
        self._cdf = np.cumsum(base.transition, axis=2)
        if isinstance(delay_spec, RandomDelay):
            self.delay = None
        else:
            self.delay = delay_spec.effective_delay
        self.max_delay = self.delay if self.delay is not None else delay_spec.support_max
        self.buffer_limit = 2 * self.max_delay + 2

        self.clock = 1
        s1 = int(self.rng.integers(base.num_states)) if initial_state is None else int(initial_state)
        self._truth: dict[int, int] = {1: s1}
        self._truth_reward: dict[int, float] = {}
        self._arrived: dict[int, int] = {}  # time index -> arrival time
        self.temp_buffer: deque[tuple[int, _Slot]] = deque()
        self._schedule_arrival(1)
        self.initial_observation = None
        if self.delay == 0:
            self._reveal(1)
            self.initial_observation = s1

    # -- bookkeeping -------------------------------------------------------

    def _slot(self, k: int) -> _Slot:
        for idx, slot in self.temp_buffer:
            if idx == k:
                return slot
        slot = _Slot()
        self.temp_buffer.append((k, slot))
        return slot

    def _get(self, k: int) -> _Slot:
        for idx, slot in self.temp_buffer:
            if idx == k:
                return slot
        raise KeyError(f"time index {k} pruned from the temporary buffer")

    def _draw_delay(self) -> int:
        if isinstance(self.delay_spec, FixedDelay):
            return self.delay_spec.delay
        src = self.delay_spec if isinstance(self.delay_spec, RandomDelay) else self.delay_spec.source
        return int(self._delay_rng.choice(len(src.probs), p=src.probs)) + 1

    def _schedule_arrival(self, k: int):
        d = self._draw_delay()
        if isinstance(self.delay_spec, ConservativeDelay) and d > self.delay_spec.max_delay:
            raise ProtocolViolation(
                f"observation of s_{k} delayed by {d} > max_delay {self.delay_spec.max_delay}"
            )
        self._arrived[k] = k + d

    def _reveal(self, k: int):
        slot = self._slot(k)
        slot.state = self._truth[k]
        if k - 1 >= 1:
            self._slot(k - 1).reward = self._truth_reward[k - 1]

    def _prune(self):
        d = self.delay if self.delay is not None else self.max_delay
        keep_from = self.clock - 2 * d - 1
        while self.temp_buffer and self.temp_buffer[0][0] < keep_from:
            self.temp_buffer.popleft()
        for k in [k for k in self._truth if k < keep_from - 1]:
            del self._truth[k]
            self._truth_reward.pop(k, None)
            self._arrived.pop(k, None)
        if len(self.temp_buffer) > self.buffer_limit:
            raise AssertionError("temporary buffer exceeded its bound")

    # -- agent-facing ------------------------------------------------------

    def augmented_state(self) -> AugmentedState | None:
        """``x_t`` for the pending decision, or None during warm-up."""
        d = self.delay
        t = self.clock
        if d is None or t <= d:
            return None
        return self._augmented(t)

    def _augmented(self, t: int) -> AugmentedState:
        d = self.delay
        s = self._get(t - d).state
        hist = tuple(self._get(k).action for k in range(t - d, t))
        return AugmentedState(s, hist)

    def step(self, action: int) -> StepOutcome:
        if not 0 <= action < self.base.num_actions:
            raise IndexError(f"action {action} out of range")
        t = self.clock
        if self.horizon is not None and t > self.horizon:
            raise SessionExhausted(f"step {t} beyond horizon {self.horizon}")
        s = self._truth[t]
        self._truth_reward[t] = float(self.base.reward[s, action])
        cdf = self._cdf[s, action]
        nxt = int(np.searchsorted(cdf, self.rng.random() * cdf[-1], side="right"))
        self._truth[t + 1] = min(nxt, self.base.num_states - 1)
        self._slot(t).action = int(action)
        self._schedule_arrival(t + 1)
        self.clock = t + 1

        arrivals = tuple(
            (k, self.clock - k) for k in sorted(self._arrived) if self._arrived[k] == self.clock
        )
        observation = observed_index = reward = None
        records: tuple[TransitionRecord, ...] = ()
        if self.delay is not None:
            k = self.clock - self.delay
            if k >= 1:
                if self._arrived[k] > self.clock:
                    raise ProtocolViolation(f"s_{k} has not arrived by time {self.clock}")
                self._reveal(k)
                observation, observed_index = self._truth[k], k
                if k - 1 >= 1:
                    reward = self._truth_reward[k - 1]
            if t > 2 * self.delay:
                records = (self._emit(t),)
        self._prune()
        return StepOutcome(t, int(action), observation, observed_index, reward, records, arrivals)

    def _emit(self, t: int) -> TransitionRecord:
        d = self.delay
        k = t - d
        return TransitionRecord(
            x_t=self._augmented(k),
            s_t=self._get(k).state,
            a_t=self._get(k).action,
            r_tilde=self._get(k).reward,
            x_next=self._augmented(k + 1),
            s_next=self._get(k + 1).state,
        )


def open_session(base: FiniteMdp, delay_spec, seed: int, horizon: int | None = None, initial_state: int | None = None) -> DelayedEnvSession:
    if isinstance(delay_spec, int):
        delay_spec = FixedDelay(delay_spec)
    return DelayedEnvSession(base, delay_spec, seed, horizon, initial_state)


def run_random_agent(session: DelayedEnvSession, steps: int, seed: int) -> list[StepOutcome]:
    """Drive ``session`` with uniformly random actions (the warm-up policy used throughout)."""
    rng = np.random.default_rng(seed)
    n = session.base.num_actions
    return [session.step(int(rng.integers(n))) for _ in range(steps)]


def trace_lines(outcomes) -> list[str]:
    """One line per step: ``t, executed_action, observed_state, observed_reward, emitted_record_count``."""
    lines = ["t,executed_action,observed_state,observed_reward,emitted_record_count"]
    for o in outcomes:
        obs = "" if o.observation is None else str(o.observation)
        rew = "" if o.reward is None else repr(o.reward)
        lines.append(f"{o.t},{o.action},{obs},{rew},{len(o.records)}")
    return lines
