"""Toy tabular MDPs: a deterministic gridworld, random garnet MDPs, a
sampling step function, state features, and tabular value iteration.

Terminal states are absorbing with zero continuation value: value iteration
pins Q(terminal, .) = 0 and episode rollouts stop on entering one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FEATURE_KINDS = ("one_hot", "random_features")


@dataclass(eq=False)
class MdpSpec:
    """Tabular MDP with a precomputed feature matrix.

    transition[s, a, s'] are probabilities (each row sums to 1), reward[s, a]
    the immediate reward. start_state is the fixed episode start, or None for
    a uniformly random start.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal: frozenset[int]
    feature_kind: str = "one_hot"
    feature_dim: int = 0
    feature_seed: int = 0
    start_state: int | None = None
    features: np.ndarray = field(init=False, repr=False)
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        s, a = self.n_states, self.n_actions
        if self.transition.shape != (s, a, s):
            raise ValueError(f"transition shape {self.transition.shape} != {(s, a, s)}")
        if self.reward.shape != (s, a):
            raise ValueError(f"reward shape {self.reward.shape} != {(s, a)}")
        sums = self.transition.sum(axis=2)
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if self.feature_kind == "one_hot":
            self.feature_dim = s
            self.features = np.eye(s)
        else:
            if self.feature_dim <= 0:
                raise ValueError("random_features needs a positive feature_dim")
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=int(self.feature_seed))
            )
            self.features = rng.standard_normal((s, self.feature_dim)) / np.sqrt(
                self.feature_dim
            )
        self._cum = np.cumsum(self.transition, axis=2)


def state_features(spec: MdpSpec, state: int) -> np.ndarray:
    return spec.features[state]


GRID_MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))  # up, down, left, right


def make_gridworld(
    width: int,
    height: int,
    goal: tuple[int, int],
    step_penalty: float = -0.05,
    seed: int = 0,
    gamma: float = 0.9,
    start: tuple[int, int] = (0, 0),
    feature_kind: str = "one_hot",
    feature_dim: int = 0,
) -> MdpSpec:
    """Deterministic 4-action grid. Moving into a wall stays in place; the
    transition that enters the goal cell pays 1, every other step pays
    step_penalty. State id of cell (x, y) is y*width + x."""
    if width * height < 2:
        raise ValueError("grid must have at least two cells")
    gx, gy = goal
    if not (0 <= gx < width and 0 <= gy < height):
        raise ValueError(f"goal {goal} outside {width}x{height} grid")
    sx, sy = start
    if not (0 <= sx < width and 0 <= sy < height):
        raise ValueError(f"start {start} outside {width}x{height} grid")
    if (sx, sy) == (gx, gy):
        raise ValueError("start must differ from goal")

    n = width * height
    goal_id = gy * width + gx
    p = np.zeros((n, 4, n))
    r = np.zeros((n, 4))
    for y in range(height):
        for x in range(width):
            s = y * width + x
            for a, (dx, dy) in enumerate(GRID_MOVES):
                if s == goal_id:
                    p[s, a, s] = 1.0  # absorbing, zero reward
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < width and 0 <= ny < height):
                    nx, ny = x, y
                ns = ny * width + nx
                p[s, a, ns] = 1.0
                r[s, a] = 1.0 if ns == goal_id else step_penalty
    return MdpSpec(
        n_states=n,
        n_actions=4,
        transition=p,
        reward=r,
        gamma=gamma,
        terminal=frozenset({goal_id}),
        feature_kind=feature_kind,
        feature_dim=feature_dim,
        feature_seed=seed,
        start_state=sy * width + sx,
    )


def make_garnet(
    n_states: int,
    n_actions: int,
    branching: int,
    seed: int,
    gamma: float = 0.9,
    feature_kind: str = "one_hot",
    feature_dim: int = 0,
) -> MdpSpec:
    """Random MDP: each (s, a) reaches `branching` distinct uniformly chosen
    states with normalized random probabilities; rewards uniform(-1, 1).
    Continuing (no terminal states), uniform random episode starts."""
    if not 1 <= branching <= n_states:
        raise ValueError(f"branching must be in [1, {n_states}], got {branching}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    p = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            mass = rng.random(branching) + 1e-12
            p[s, a, succ] = mass / mass.sum()
    r = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return MdpSpec(
        n_states=n_states,
        n_actions=n_actions,
        transition=p,
        reward=r,
        gamma=gamma,
        terminal=frozenset(),
        feature_kind=feature_kind,
        feature_dim=feature_dim,
        feature_seed=seed,
        start_state=None,
    )


def env_step(
    spec: MdpSpec, state: int, action: int, rng: np.random.Generator
) -> tuple[int, float, bool]:
    """Sample one transition. Returns (next state, reward, next is terminal).

    Stepping from a terminal state is a zero-reward self-loop, flagged
    terminal; callers should not accumulate further reward there.
    """
    if not 0 <= state < spec.n_states:
        raise ValueError(f"invalid state {state}")
    if not 0 <= action < spec.n_actions:
        raise ValueError(f"invalid action {action}")
    if state in spec.terminal:
        return state, 0.0, True
    u = rng.random()
    nxt = int(np.searchsorted(spec._cum[state, action], u, side="right"))
    nxt = min(nxt, spec.n_states - 1)
    return nxt, float(spec.reward[state, action]), nxt in spec.terminal


def episode_start(spec: MdpSpec, rng: np.random.Generator) -> int:
    if spec.start_state is not None:
        return spec.start_state
    return int(rng.integers(spec.n_states))


def episode_return(
    spec: MdpSpec,
    choose_action,
    horizon: int,
    rng: np.random.Generator,
) -> float:
    """Undiscounted return of one rollout capped at `horizon` steps."""
    s = episode_start(spec, rng)
    total = 0.0
    for _ in range(horizon):
        if s in spec.terminal:
            break
        a = choose_action(s)
        s, r, term = env_step(spec, s, a, rng)
        total += r
        if term:
            break
    return total


def value_iteration(spec: MdpSpec, tol: float = 1e-10) -> np.ndarray:
    """Tabular optimal Q via optimality backups until the sup-norm change
    drops below tol. Rows of terminal states are 0."""
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    term = np.array([s in spec.terminal for s in range(spec.n_states)])
    q = np.zeros((spec.n_states, spec.n_actions))
    while True:
        v = q.max(axis=1)
        v[term] = 0.0
        q_new = spec.reward + spec.gamma * (spec.transition @ v)
        q_new[term, :] = 0.0
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new


def bellman_backup(spec: MdpSpec, q: np.ndarray) -> np.ndarray:
    """One optimality backup of a q-table, with the terminal conventions of
    value_iteration."""
    term = np.array([s in spec.terminal for s in range(spec.n_states)])
    v = q.max(axis=1)
    v[term] = 0.0
    out = spec.reward + spec.gamma * (spec.transition @ v)
    out[term, :] = 0.0
    return out


def mdp_to_json(spec: MdpSpec) -> dict:
    """JSON-serializable document; features are rebuilt on load."""
    return {
        "n_states": spec.n_states,
        "n_actions": spec.n_actions,
        "transition": spec.transition.tolist(),
        "reward": spec.reward.tolist(),
        "gamma": spec.gamma,
        "terminal": sorted(spec.terminal),
        "feature_kind": spec.feature_kind,
        "feature_dim": spec.feature_dim,
        "feature_seed": spec.feature_seed,
        "start_state": spec.start_state,
    }


def mdp_from_json(doc: dict) -> MdpSpec:
    return MdpSpec(
        n_states=int(doc["n_states"]),
        n_actions=int(doc["n_actions"]),
        transition=np.asarray(doc["transition"], dtype=np.float64),
        reward=np.asarray(doc["reward"], dtype=np.float64),
        gamma=float(doc["gamma"]),
        terminal=frozenset(int(s) for s in doc["terminal"]),
        feature_kind=doc.get("feature_kind", "one_hot"),
        feature_dim=int(doc.get("feature_dim", 0)),
        feature_seed=int(doc.get("feature_seed", 0)),
        start_state=None if doc.get("start_state") is None else int(doc["start_state"]),
    )
