"""Benchmark environments: modified cliffwalk, maze, Garnet, two-state chain."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mdp import InducedKernel, Policy, TabularMdp, solve_control_exact

UP, RIGHT, DOWN, LEFT = range(4)
MOVES = {UP: (-1, 0), RIGHT: (0, 1), DOWN: (1, 0), LEFT: (0, -1)}


@dataclass
class GridSpec:
    """Layout of a noisy gridworld. Cells are (row, col), row 0 on top."""

    width: int = 6
    height: int = 6
    start: tuple = (0, 0)
    goal: tuple = (0, 5)
    holes: list = field(default_factory=list)  # [((row, col), reward), ...]
    walls: list = field(default_factory=list)  # [((r1, c1), (r2, c2)), ...]
    step_reward: float = -1.0
    goal_reward: float = 20.0
    action_success: float = 0.9
    discount: float = 0.9

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 <= self.action_success <= 1.0:
            raise ValueError("action_success must lie in [0, 1]")
        cells = [self.start, self.goal] + [c for c, _ in self.holes]
        for c in cells:
            self._check_cell(c)
        for c1, c2 in self.walls:
            self._check_cell(c1)
            self._check_cell(c2)
            if abs(c1[0] - c2[0]) + abs(c1[1] - c2[1]) != 1:
                raise ValueError(f"wall {c1}-{c2} does not separate adjacent cells")

    def _check_cell(self, c):
        r, col = c
        if not (0 <= r < self.height and 0 <= col < self.width):
            raise ValueError(f"cell {c} outside the {self.height}x{self.width} grid")

    def state(self, cell) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, s: int) -> tuple:
        return divmod(s, self.width)


@dataclass
class GarnetSpec:
    n_states: int = 50
    n_actions: int = 4
    branching: int = 3
    reward_states: int = 5
    discount: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if min(self.n_states, self.n_actions, self.branching, self.reward_states) < 1:
            raise ValueError("Garnet sizes must be positive")
        if self.branching > self.n_states or self.reward_states > self.n_states:
            raise ValueError("branching and reward_states cannot exceed n_states")


CLIFFWALK_HOLE_REWARDS = (-32.0, -16.0, -8.0)

# S-shaped default: (0,0) -> down the left column, across the bottom, up the
# middle column and right along the top row to the goal.
DEFAULT_MAZE_WALLS = [
    ((0, 0), (0, 1)),
    ((1, 0), (1, 1)),
    ((1, 1), (1, 2)),
    ((2, 1), (2, 2)),
]


def cliffwalk_spec() -> GridSpec:
    holes = []
    for row, rew in zip((0, 2, 4), CLIFFWALK_HOLE_REWARDS):
        holes += [((row, col), rew) for col in range(1, 5)]
    return GridSpec(width=6, height=6, start=(0, 0), goal=(0, 5), holes=holes,
                    step_reward=-1.0, goal_reward=20.0, action_success=0.9, discount=0.9)


def maze_spec(walls=None) -> GridSpec:
    walls = DEFAULT_MAZE_WALLS if walls is None else [tuple(map(tuple, w)) for w in walls]
    return GridSpec(width=3, height=3, start=(0, 0), goal=(0, 2), holes=[], walls=walls,
                    step_reward=0.0, goal_reward=1.0, action_success=0.9, discount=0.9)


def build_grid(spec: GridSpec) -> TabularMdp:
    """Gridworld MDP. Holes and the goal are absorbing self-loops."""
    n = spec.width * spec.height
    P = np.zeros((n, 4, n))
    R = np.full((n, 4), float(spec.step_reward))
    blocked = set()
    for c1, c2 in spec.walls:
        blocked.add((tuple(c1), tuple(c2)))
        blocked.add((tuple(c2), tuple(c1)))
    absorbing = {spec.state(spec.goal): spec.goal_reward}
    for c, rew in spec.holes:
        absorbing[spec.state(c)] = rew
    slip = (1.0 - spec.action_success) / 3.0
    for s in range(n):
        if s in absorbing:
            P[s, :, s] = 1.0
            R[s, :] = absorbing[s]
            continue
        here = spec.cell(s)
        for a in range(4):
            for d in range(4):
                mass = spec.action_success if d == a else slip
                dr, dc = MOVES[d]
                there = (here[0] + dr, here[1] + dc)
                inside = 0 <= there[0] < spec.height and 0 <= there[1] < spec.width
                target = spec.state(there) if inside and (here, there) not in blocked else s
                P[s, a, target] += mass
    return TabularMdp(P, R, spec.discount)


def build_cliffwalk():
    """6x6 modified cliffwalk and its optimal (evaluation) policy."""
    mdp = build_grid(cliffwalk_spec())
    return mdp, solve_control_exact(mdp)[1]


def build_maze(walls=None):
    """3x3 maze and its optimal (evaluation) policy."""
    mdp = build_grid(maze_spec(walls))
    return mdp, solve_control_exact(mdp)[1]


def build_garnet(spec: GarnetSpec) -> TabularMdp:
    rng = np.random.default_rng(spec.seed)
    n, m, b = spec.n_states, spec.n_actions, spec.branching
    P = np.zeros((n, m, n))
    for x in range(n):
        for a in range(m):
            succ = rng.choice(n, size=b, replace=False)
            cuts = np.sort(rng.uniform(0.0, 1.0, size=b - 1))
            P[x, a, succ] = np.diff(np.concatenate(([0.0], cuts, [1.0])))
    r_states = rng.choice(n, size=spec.reward_states, replace=False)
    r = np.zeros(n)
    # uniform draws on the open interval (0, 1)
    vals = rng.uniform(0.0, 1.0, size=spec.reward_states)
    while np.any(vals == 0.0):  # pragma: no cover
        vals[vals == 0.0] = rng.uniform(0.0, 1.0, size=int(np.sum(vals == 0.0)))
    r[r_states] = vals
    R = np.repeat(r[:, None], m, axis=1)
    return TabularMdp(P, R, spec.discount)


TWO_STATE_P = np.array([[0.9, 0.1], [0.1, 0.9]])
TWO_STATE_R = np.array([1.0, -0.5])
TWO_STATE_ACCURATE = np.array([[0.85, 0.15], [0.05, 0.95]])
TWO_STATE_INACCURATE = np.array([[0.6, 0.4], [0.3, 0.7]])


def two_state_mdp() -> TabularMdp:
    """The 2-state PE problem as a single-action MDP."""
    return TabularMdp(TWO_STATE_P[:, None, :], TWO_STATE_R[:, None], 0.9)


def build_two_state():
    """(P^pi problem, accurate ModelPair, inaccurate ModelPair)."""
    from .varga import ModelPair

    mdp = two_state_mdp()
    kern = InducedKernel(TWO_STATE_P.copy(), TWO_STATE_R.copy())
    accurate = ModelPair(mdp, TWO_STATE_ACCURATE[:, None, :])
    inaccurate = ModelPair(mdp, TWO_STATE_INACCURATE[:, None, :])
    return kern, accurate, inaccurate


def two_state_policy() -> Policy:
    return Policy.deterministic([0, 0], 1)


def sample_transition(mdp: TabularMdp, x: int, a: int, rng: np.random.Generator):
    """One environment step: (expected reward, next state)."""
    if not (0 <= x < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"state/action ({x}, {a}) out of range")
    r, xp = sample_batch(mdp, np.array([x]), np.array([a]), rng)
    return float(r[0]), int(xp[0])


def sample_batch(mdp: TabularMdp, xs, acts, rng: np.random.Generator):
    """Vectorised ``sample_transition`` for arrays of (x, a)."""
    cdf = np.cumsum(mdp.transition[xs, acts], axis=1)
    u = rng.uniform(size=len(xs))
    nexts = (cdf < u[:, None]).sum(axis=1)
    # zero-mass trailing states must never be drawn, even with cdf rounding
    nexts = np.minimum(nexts, mdp.n_states - 1)
    while True:
        bad = mdp.transition[xs, acts, nexts] == 0.0
        if not bad.any():
            break
        nexts[bad] -= 1
    return mdp.reward[xs, acts].copy(), nexts.astype(np.int64)


def make_env(name: str, **overrides):
    """Build an environment by CLI name. Returns (mdp, evaluation policy)."""
    if name == "cliffwalk":
        return build_cliffwalk()
    if name == "maze":
        return build_maze(overrides.get("walls"))
    if name == "garnet":
        keys = {"n_states", "n_actions", "branching", "reward_states", "discount", "seed"}
        mdp = build_garnet(GarnetSpec(**{k: v for k, v in overrides.items() if k in keys}))
        return mdp, solve_control_exact(mdp)[1]
    if name == "two-state":
        return two_state_mdp(), two_state_policy()
    raise ValueError(f"unknown environment {name!r}")
