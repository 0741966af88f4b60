"""Instance generators.

Layouts
-------
flip
    States ``s0, s1``; action 0 = stay, 1 = flip (toggles with probability
    ``flip_success``, otherwise stays). Reward 1 in ``s1`` for every action.
chain(n)
    States ``0..n-1``; action 0 = left, 1 = right, clipped at both ends so
    the rightmost state loops on "right". Reward 1 in state ``n-1``.
gridworld(width, height, slip_prob)
    Cell ``(col, row)`` is state ``row * width + col``; actions 0..3 are
    up, right, down, left. The intended move happens with probability
    ``1 - slip_prob``; each perpendicular move with ``slip_prob / 2``.
    Moves into a wall leave the agent in place. Reward 1 in the last cell.
"""

from __future__ import annotations

import numpy as np

from dhrl.mdp import FiniteMdp

STAY, FLIP = 0, 1
LEFT, RIGHT = 0, 1
UP, EAST, DOWN, WEST = 0, 1, 2, 3


def make_flip(flip_success: float = 1.0, discount: float = 0.9) -> FiniteMdp:
    if not 0.0 <= flip_success <= 1.0:
        raise ValueError("flip_success must lie in [0, 1]")
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, STAY, s] = 1.0
        P[s, FLIP, 1 - s] = flip_success
        P[s, FLIP, s] += 1.0 - flip_success
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    return FiniteMdp(P, R, discount)


def make_chain(n: int, discount: float = 0.9) -> FiniteMdp:
    if n < 1:
        raise ValueError("chain length must be at least 1")
    P = np.zeros((n, 2, n))
    for s in range(n):
        P[s, LEFT, max(s - 1, 0)] = 1.0
        P[s, RIGHT, min(s + 1, n - 1)] = 1.0
    R = np.zeros((n, 2))
    R[n - 1, :] = 1.0
    return FiniteMdp(P, R, discount)


_MOVES = {UP: (0, 1), EAST: (1, 0), DOWN: (0, -1), WEST: (-1, 0)}
_LATERAL = {UP: (WEST, EAST), DOWN: (WEST, EAST), EAST: (UP, DOWN), WEST: (UP, DOWN)}


def make_gridworld(width: int, height: int, slip_prob: float = 0.0, discount: float = 0.9) -> FiniteMdp:
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be at least 1")
    if not 0.0 <= slip_prob < 1.0:
        raise ValueError("slip_prob must lie in [0, 1)")
    n = width * height

    def target(s, move):
        col, row = s % width, s // width
        dc, dr = _MOVES[move]
        c, r = col + dc, row + dr
        if 0 <= c < width and 0 <= r < height:
            return r * width + c
        return s

    P = np.zeros((n, 4, n))
    for s in range(n):
        for a in range(4):
            P[s, a, target(s, a)] += 1.0 - slip_prob
            for lat in _LATERAL[a]:
                P[s, a, target(s, lat)] += slip_prob / 2.0
    R = np.zeros((n, 4))
    R[n - 1, :] = 1.0
    return FiniteMdp(P, R, discount)


def make_random_mdp(
    num_states: int,
    num_actions: int,
    seed: int,
    deterministic: bool = True,
    branching: int = 2,
    discount: float = 0.9,
    permutation: bool = False,
) -> FiniteMdp:
    """Random MDP with rewards uniform in [0, 1].

    Deterministic rows are Diracs at a uniform successor; stochastic rows put
    Dirichlet(1) weights on ``branching`` distinct uniformly drawn states.
    With ``permutation`` every action is a uniformly drawn bijection of the
    states (deterministic only), so every state stays reachable at any delay.
    """
    if num_states < 1 or num_actions < 1:
        raise ValueError("num_states and num_actions must be positive")
    if not deterministic and not 1 <= branching <= num_states:
        raise ValueError("branching must lie in [1, num_states]")
    if permutation and not deterministic:
        raise ValueError("permutation dynamics are deterministic")
    rng = np.random.default_rng(seed)
    P = np.zeros((num_states, num_actions, num_states))
    if permutation:
        for a in range(num_actions):
            P[np.arange(num_states), a, rng.permutation(num_states)] = 1.0
        R = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
        return FiniteMdp(P, R, discount)
    for s in range(num_states):
        for a in range(num_actions):
            if deterministic:
                P[s, a, rng.integers(num_states)] = 1.0
            else:
                support = rng.choice(num_states, size=branching, replace=False)
                weights = rng.dirichlet(np.ones(branching))
                # force an exact row sum so validation never trips on rounding
                weights[-1] = 1.0 - weights[:-1].sum()
                P[s, a, support] = weights
    R = rng.uniform(0.0, 1.0, size=(num_states, num_actions))
    return FiniteMdp(P, R, discount)


GENERATORS = {
    "flip": make_flip,
    "chain": make_chain,
    "gridworld": make_gridworld,
    "random": make_random_mdp,
}
