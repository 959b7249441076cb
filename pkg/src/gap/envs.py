"""Deterministic ground-truth environments with known dynamics, cost and goals.

Two families:

* PointNav2D — a point agent in the unit square, additive clipped dynamics.
  Start is always the center; goals are uniform in the square.
* BlockPush2D — an agent plus three pushable blocks (state dim 8). The agent
  displaces any block within a contact radius along its motion direction;
  tasks score only the designated block coordinates.

States and goals are plain float64 vectors with every coordinate in [0, 1].
Environments hold no mutable state: `step` is a pure value transformer, so
rollouts can run concurrently with independent RNG streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndiff import ShapeError

ARENA_LO = 0.0
ARENA_HI = 1.0
CONTACT_RADIUS = 0.06
# slight over-separation keeps "no overlap" robust to float rounding
_SEPARATION = CONTACT_RADIUS * (1.0 + 1e-9)

BLOCK_LATTICE = np.array([[0.35, 0.35], [0.50, 0.35], [0.65, 0.35]])
BLOCK_JITTER = 0.03
AGENT_START = np.array([0.5, 0.15])
GOAL_BAND = (0.2, 0.8)
GOAL_MIN_DIST = 0.15

GRID_SIZE = 12
GRID_CHANNELS = 4  # agent + 3 blocks


@dataclass(frozen=True)
class EnvSpec:
    """Static description of one environment/task."""

    env_id: str
    state_dim: int
    action_dim: int
    action_bound: float
    episode_len: int
    success_threshold: float
    goal_sampler: str
    observation_mode: str  # "vector" | "grid"

    def __post_init__(self):
        if self.success_threshold <= 0:
            raise ValueError("success threshold must be positive")
        if self.episode_len < 2:
            raise ValueError("episode length must be at least 2")


def _check_action(a: np.ndarray, bound: float) -> None:
    if np.max(np.abs(a)) > bound + 1e-12:
        raise ValueError(
            f"action {a} exceeds per-coordinate bound {bound}; clip before stepping"
        )


def _check_dims(s: np.ndarray, g: np.ndarray) -> None:
    if s.shape != g.shape:
        raise ShapeError(f"state/goal dims differ: {s.shape} vs {g.shape}")


class PointNav2D:
    """2D navigation: s' = clip(s + a, 0, 1), start at the center."""

    def __init__(self):
        self.spec = EnvSpec(
            env_id="pointnav",
            state_dim=2,
            action_dim=2,
            action_bound=0.1,
            episode_len=10,
            success_threshold=0.1,
            goal_sampler="uniform",
            observation_mode="vector",
        )
        self.scored_dims = np.arange(2)

    @property
    def obs_dim(self) -> int:
        return 2

    def reset(self, seed=None) -> np.ndarray:
        return np.array([0.5, 0.5])

    def sample_goal(self, seed, s0=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.uniform(0.0, 1.0, size=2)

    def step(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        _check_action(a, self.spec.action_bound)
        return np.clip(s + a, ARENA_LO, ARENA_HI)

    def step_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        _check_action(actions, self.spec.action_bound)
        return np.clip(states + actions, ARENA_LO, ARENA_HI)

    def cost(self, s: np.ndarray, g: np.ndarray) -> float:
        _check_dims(s, g)
        d = s - g
        return float(np.dot(d, d))

    def cost_batch(self, states: np.ndarray, g: np.ndarray) -> np.ndarray:
        diff = states - g
        return np.sum(diff * diff, axis=-1)

    def success(self, s: np.ndarray, g: np.ndarray) -> bool:
        _check_dims(s, g)
        return bool(np.linalg.norm(s - g) < self.spec.success_threshold)

    def observe(self, s: np.ndarray) -> np.ndarray:
        return np.asarray(s, dtype=np.float64).copy()

    def observe_batch(self, states: np.ndarray) -> np.ndarray:
        return np.asarray(states, dtype=np.float64).copy()


def _axis_candidates(center: np.ndarray) -> list[np.ndarray]:
    """In-arena points at the separation distance along each axis, fixed order."""
    offsets = [(_SEPARATION, 0.0), (-_SEPARATION, 0.0),
               (0.0, _SEPARATION), (0.0, -_SEPARATION)]
    out = []
    for dx, dy in offsets:
        cand = center + np.array([dx, dy])
        if ARENA_LO <= cand[0] <= ARENA_HI and ARENA_LO <= cand[1] <= ARENA_HI:
            out.append(cand)
    return out


def _separate_block(block: np.ndarray, agent: np.ndarray, motion_dir: np.ndarray) -> np.ndarray:
    """Move `block` the minimal amount so it no longer overlaps `agent`.

    Radial push first; if arena clipping defeats it (agent against a wall),
    fall back to the nearest in-arena axis-aligned point at contact distance.
    """
    delta = block - agent
    d = float(np.linalg.norm(delta))
    if d >= CONTACT_RADIUS:
        return block
    direction = delta / d if d > 1e-12 else motion_dir
    cand = np.clip(agent + direction * _SEPARATION, ARENA_LO, ARENA_HI)
    if np.linalg.norm(cand - agent) >= CONTACT_RADIUS:
        return cand
    candidates = _axis_candidates(agent)
    dists = [np.linalg.norm(c - block) for c in candidates]
    return candidates[int(np.argmin(dists))]


class BlockPush2D:
    """Agent + three pushable blocks; kinematic overlap-projection pushing.

    State layout: [agent_x, agent_y, b0_x, b0_y, b1_x, b1_y, b2_x, b2_y].
    A block whose center lies within the contact radius of the post-move
    agent position is displaced along the agent's motion direction by the
    overlap depth, then kept inside the arena and out of the agent's disk.
    Zero action changes nothing (momentum-free).
    """

    N_BLOCKS = 3

    _TASKS = {
        "task1": {"blocks": (0,), "threshold": 0.08},
        "task2": {"blocks": (0, 1), "threshold": 0.1},
    }

    def __init__(self, task: str = "task1", observation_mode: str = "vector"):
        if task not in self._TASKS:
            raise ValueError(f"unknown blockpush task '{task}'")
        cfg = self._TASKS[task]
        self.task = task
        self.task_blocks = cfg["blocks"]
        mode_tag = "grid-" if observation_mode == "grid" else ""
        self.spec = EnvSpec(
            env_id=f"blockpush-{mode_tag}{task}",
            state_dim=2 + 2 * self.N_BLOCKS,
            action_dim=2,
            action_bound=0.1,
            episode_len=30,
            success_threshold=cfg["threshold"],
            goal_sampler=task,
            observation_mode=observation_mode,
        )
        dims = []
        for b in self.task_blocks:
            dims.extend([2 + 2 * b, 3 + 2 * b])
        self.scored_dims = np.array(dims)

    @property
    def obs_dim(self) -> int:
        if self.spec.observation_mode == "grid":
            return GRID_SIZE * GRID_SIZE * GRID_CHANNELS
        return self.spec.state_dim

    def reset(self, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        blocks = BLOCK_LATTICE + rng.uniform(-BLOCK_JITTER, BLOCK_JITTER, size=(self.N_BLOCKS, 2))
        return np.concatenate([AGENT_START, blocks.reshape(-1)])

    def sample_goal(self, seed, s0=None) -> np.ndarray:
        """Goal = start state with designated block coords replaced by targets.

        Targets are uniform in the reachable band, re-sampled until at least
        GOAL_MIN_DIST from that block's start position.
        """
        if s0 is None:
            raise ValueError("blockpush goal sampling needs the episode start state")
        rng = np.random.default_rng(seed)
        goal = np.asarray(s0, dtype=np.float64).copy()
        for b in self.task_blocks:
            start = s0[2 + 2 * b: 4 + 2 * b]
            while True:
                target = rng.uniform(GOAL_BAND[0], GOAL_BAND[1], size=2)
                if np.linalg.norm(target - start) >= GOAL_MIN_DIST:
                    break
            goal[2 + 2 * b: 4 + 2 * b] = target
        return goal

    def step(self, s: np.ndarray, a: np.ndarray) -> np.ndarray:
        _check_action(a, self.spec.action_bound)
        agent0 = s[:2]
        agent1 = np.clip(agent0 + a, ARENA_LO, ARENA_HI)
        motion = agent1 - agent0
        mn = float(np.linalg.norm(motion))
        blocks = s[2:].reshape(self.N_BLOCKS, 2).copy()
        if mn > 0.0:
            u = motion / mn
            for k in range(self.N_BLOCKS):
                d = float(np.linalg.norm(blocks[k] - agent1))
                if d < CONTACT_RADIUS:
                    blocks[k] = np.clip(blocks[k] + u * (CONTACT_RADIUS - d),
                                        ARENA_LO, ARENA_HI)
                    blocks[k] = _separate_block(blocks[k], agent1, u)
        return np.concatenate([agent1, blocks.reshape(-1)])

    def step_batch(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Vectorised step over (B, 8) states; agrees with step() row-by-row."""
        _check_action(actions, self.spec.action_bound)
        agent0 = states[:, :2]
        agent1 = np.clip(agent0 + actions, ARENA_LO, ARENA_HI)
        motion = agent1 - agent0
        mn = np.linalg.norm(motion, axis=1)
        moved = mn > 0.0
        u = np.zeros_like(motion)
        u[moved] = motion[moved] / mn[moved, None]
        out = np.empty_like(states)
        out[:, :2] = agent1
        for k in range(self.N_BLOCKS):
            block = states[:, 2 + 2 * k: 4 + 2 * k].copy()
            delta = block - agent1
            d = np.linalg.norm(delta, axis=1)
            hit = moved & (d < CONTACT_RADIUS)
            if np.any(hit):
                block[hit] = np.clip(
                    block[hit] + u[hit] * (CONTACT_RADIUS - d[hit])[:, None],
                    ARENA_LO, ARENA_HI)
                delta2 = block[hit] - agent1[hit]
                d2 = np.linalg.norm(delta2, axis=1)
                bad = d2 < CONTACT_RADIUS
                if np.any(bad):
                    rows = np.flatnonzero(hit)[bad]
                    for r in rows:
                        block[r] = _separate_block(block[r], agent1[r], u[r])
            out[:, 2 + 2 * k: 4 + 2 * k] = block
        return out

    def cost(self, s: np.ndarray, g: np.ndarray) -> float:
        _check_dims(s, g)
        d = s[self.scored_dims] - g[self.scored_dims]
        return float(np.dot(d, d))

    def cost_batch(self, states: np.ndarray, g: np.ndarray) -> np.ndarray:
        diff = states[..., self.scored_dims] - g[self.scored_dims]
        return np.sum(diff * diff, axis=-1)

    def success(self, s: np.ndarray, g: np.ndarray) -> bool:
        _check_dims(s, g)
        thr = self.spec.success_threshold
        for b in self.task_blocks:
            sl = slice(2 + 2 * b, 4 + 2 * b)
            if np.linalg.norm(s[sl] - g[sl]) >= thr:
                return False
        return True

    def render_grid(self, s: np.ndarray) -> np.ndarray:
        """12x12x4 occupancy grid, one channel per entity, bilinear splatting."""
        return render_grid(s)

    def observe(self, s: np.ndarray) -> np.ndarray:
        if self.spec.observation_mode == "grid":
            return render_grid(s).reshape(-1)
        return np.asarray(s, dtype=np.float64).copy()

    def observe_batch(self, states: np.ndarray) -> np.ndarray:
        if self.spec.observation_mode == "grid":
            return render_grid_batch(states).reshape(states.shape[0], -1)
        return np.asarray(states, dtype=np.float64).copy()


def render_grid(s: np.ndarray) -> np.ndarray:
    """Splat the agent and each block onto a GRID_SIZE^2 grid per channel.

    Positions map to continuous cell coordinates with cell centers at
    (i + 0.5) / GRID_SIZE, so an entity exactly at a cell center puts all
    of its unit mass in that cell. Mass falling outside the grid (entities
    hugging the arena edge) is dropped.
    """
    return render_grid_batch(s[None, :])[0]


def render_grid_batch(states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    batch = states.shape[0]
    n_entities = states.shape[1] // 2
    grids = np.zeros((batch, GRID_SIZE, GRID_SIZE, n_entities))
    pos = states.reshape(batch, n_entities, 2)
    cx = pos[..., 0] * GRID_SIZE - 0.5
    cy = pos[..., 1] * GRID_SIZE - 0.5
    ix0 = np.floor(cx).astype(int)
    iy0 = np.floor(cy).astype(int)
    fx = cx - ix0
    fy = cy - iy0
    b_idx, e_idx = np.meshgrid(np.arange(batch), np.arange(n_entities), indexing="ij")
    for dx, wx in ((0, 1.0 - fx), (1, fx)):
        for dy, wy in ((0, 1.0 - fy), (1, fy)):
            gx = ix0 + dx
            gy = iy0 + dy
            ok = (gx >= 0) & (gx < GRID_SIZE) & (gy >= 0) & (gy < GRID_SIZE)
            np.add.at(grids,
                      (b_idx[ok], gx[ok], gy[ok], e_idx[ok]),
                      (wx * wy)[ok])
    return grids


_ENV_IDS = ("pointnav", "blockpush-task1", "blockpush-task2", "blockpush-grid-task1")


def make_env(env_id: str):
    """Build an environment from its CLI id string."""
    if env_id == "pointnav":
        return PointNav2D()
    if env_id == "blockpush-task1":
        return BlockPush2D(task="task1")
    if env_id == "blockpush-task2":
        return BlockPush2D(task="task2")
    if env_id == "blockpush-grid-task1":
        return BlockPush2D(task="task1", observation_mode="grid")
    raise ValueError(f"unknown env id '{env_id}'; known: {', '.join(_ENV_IDS)}")


def env_ids() -> tuple[str, ...]:
    return _ENV_IDS
