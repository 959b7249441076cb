"""Self-supervised data collection, dataset files, and hindsight relabeling.

Data comes from a uniform-random policy. Training windows are cut from
stored episodes and relabeled in hindsight: the window's final state becomes
its goal, and targets are the goal-state residuals r_k = goal - s_{t+k}.
The same windows carry raw successor states so every model variant trains
on identical batches.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .envs import make_env

DATASET_MAGIC = b"GAPD"
DATASET_VERSION = 1

DEFAULT_EPISODES = 500
DEFAULT_EPISODE_LEN = 30
DEFAULT_WINDOW_LEN = 15
DEFAULT_STEP_QUOTA = 2000
DEFAULT_H_MAX = 10


@dataclass
class Trajectory:
    """One episode: states (T+1, D) and the actions (T, A) between them."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValueError(
                f"trajectory needs one more state than actions, got "
                f"{self.states.shape[0]} states / {self.actions.shape[0]} actions"
            )


@dataclass
class Dataset:
    """A batch of equal-length episodes from one environment."""

    env_id: str
    states: np.ndarray   # (N, T+1, D)
    actions: np.ndarray  # (N, T, A)
    seed: int

    @property
    def n_episodes(self) -> int:
        return self.states.shape[0]

    @property
    def episode_len(self) -> int:
        return self.actions.shape[1]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.states[i], self.actions[i])


@dataclass
class RelabeledWindow:
    """One training sample in observation space.

    residuals[k] = goal - s_{t+k} for k = 0..H; when t+H lands on the window
    end the last residual is exactly zero (the goal is the window's final
    state).
    """

    s_t: np.ndarray        # (D_obs,)
    actions: np.ndarray    # (H, A)
    successors: np.ndarray # (H, D_obs)
    goal: np.ndarray       # (D_obs,)
    residuals: np.ndarray  # (H+1, D_obs)


@dataclass
class WindowBatch:
    """Stacked RelabeledWindows (leading batch axis on every field)."""

    s_t: np.ndarray        # (B, D_obs)
    actions: np.ndarray    # (B, H, A)
    successors: np.ndarray # (B, H, D_obs)
    goal: np.ndarray       # (B, D_obs)
    residuals: np.ndarray  # (B, H+1, D_obs)

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]


def collect(env_id: str, episodes: int, length: int, seed: int) -> Dataset:
    """Roll a uniform-random policy; deterministic per (seed, episode index)."""
    if episodes < 1:
        raise ValueError("need at least one episode")
    env = make_env(env_id)
    dim = env.spec.state_dim
    adim = env.spec.action_dim
    bound = env.spec.action_bound
    states = np.empty((episodes, length + 1, dim))
    actions = np.empty((episodes, length, adim))
    for i in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence((seed, i)))
        s = env.reset(rng)
        states[i, 0] = s
        acts = rng.uniform(-bound, bound, size=(length, adim))
        for t in range(length):
            s = env.step(s, acts[t])
            states[i, t + 1] = s
        actions[i] = acts
    return Dataset(env_id=env_id, states=states, actions=actions, seed=seed)


def write_dataset(path, ds: Dataset) -> None:
    """GAPD binary format; states/actions stored as little-endian float32."""
    n, t_plus_1, dim = ds.states.shape
    t = t_plus_1 - 1
    adim = ds.actions.shape[2]
    try:
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            raw_id = ds.env_id.encode("utf-8")
            fh.write(struct.pack("<II", DATASET_VERSION, len(raw_id)))
            fh.write(raw_id)
            fh.write(struct.pack("<IIII", n, t, dim, adim))
            for i in range(n):
                fh.write(ds.states[i].astype("<f4").tobytes())
                fh.write(ds.actions[i].astype("<f4").tobytes())
    except OSError as exc:
        raise RuntimeError(f"failed writing dataset to {path}: {exc}") from exc


def read_dataset(path, verify: bool = True) -> Dataset:
    """Read a GAPD file; optionally spot-check stored transitions."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
        version, id_len = struct.unpack("<II", fh.read(8))
        if version != DATASET_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        env_id = fh.read(id_len).decode("utf-8")
        n, t, dim, adim = struct.unpack("<IIII", fh.read(16))
        states = np.empty((n, t + 1, dim))
        actions = np.empty((n, t, adim))
        for i in range(n):
            states[i] = np.frombuffer(fh.read(4 * (t + 1) * dim), dtype="<f4").reshape(t + 1, dim)
            actions[i] = np.frombuffer(fh.read(4 * t * adim), dtype="<f4").reshape(t, adim)
    ds = Dataset(env_id=env_id, states=states, actions=actions, seed=-1)
    if verify:
        _spot_check(ds)
    return ds


def _spot_check(ds: Dataset, triples: int = 32) -> None:
    """Re-simulate a few stored transitions; float32 storage allows ~1e-5 slack."""
    env = make_env(ds.env_id)
    rng = np.random.default_rng(0)
    n, t = ds.n_episodes, ds.episode_len
    for _ in range(min(triples, n * t)):
        i = int(rng.integers(n))
        k = int(rng.integers(t))
        redo = env.step(ds.states[i, k], np.clip(ds.actions[i, k],
                                                 -env.spec.action_bound,
                                                 env.spec.action_bound))
        if not np.allclose(redo, ds.states[i, k + 1], atol=1e-5):
            raise ValueError(
                f"dataset transition check failed at episode {i}, step {k}: "
                f"stored successor differs from env.step by "
                f"{np.max(np.abs(redo - ds.states[i, k + 1])):.2e}"
            )


def curriculum_H(train_step: int, step_quota: int, h_max: int = DEFAULT_H_MAX) -> int:
    """Prediction horizon schedule: +1 every `step_quota` steps, capped at h_max."""
    if step_quota < 1:
        raise ValueError("step quota must be >= 1")
    return min(train_step // step_quota, h_max)


class WindowSampler:
    """Cuts relabeled windows out of a dataset, never crossing episodes.

    Observations (identity for vector mode, occupancy grids for grid mode)
    are precomputed once. Batches depend only on (dataset, window_len, seed,
    goal_mode) and the sequence of sample calls, so two samplers built the
    same way emit byte-identical batches — the fair-comparison guarantee
    across model variants.
    """

    def __init__(self, ds: Dataset, window_len: int = DEFAULT_WINDOW_LEN,
                 seed: int = 0, goal_mode: str = "window"):
        if window_len > ds.episode_len:
            raise ValueError(
                f"window_len {window_len} exceeds episode length {ds.episode_len}"
            )
        if goal_mode not in ("window", "episode"):
            raise ValueError("goal_mode must be 'window' or 'episode'")
        self.ds = ds
        self.env = make_env(ds.env_id)
        self.window_len = window_len
        self.goal_mode = goal_mode
        self.rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD47A)))
        n, t_plus_1, _ = ds.states.shape
        flat = ds.states.reshape(n * t_plus_1, -1)
        self.obs = self.env.observe_batch(flat).reshape(n, t_plus_1, -1)
        self.obs_dim = self.obs.shape[-1]

    def sample_window(self, H: int) -> RelabeledWindow:
        batch = self.sample_batch(1, H)
        return RelabeledWindow(
            s_t=batch.s_t[0], actions=batch.actions[0],
            successors=batch.successors[0], goal=batch.goal[0],
            residuals=batch.residuals[0],
        )

    def sample_batch(self, batch_size: int, H: int) -> WindowBatch:
        if H > self.window_len - 1:
            raise ValueError(
                f"H={H} too large for window of length {self.window_len}"
            )
        if H < 0:
            raise ValueError("H must be >= 0")
        n = self.ds.n_episodes
        t = self.ds.episode_len
        traj = self.rng.integers(0, n, size=batch_size)
        w0 = self.rng.integers(0, t - self.window_len + 1, size=batch_size)
        # prediction start: anywhere in the window with room for H steps
        offs = self.rng.integers(0, self.window_len - H + 1, size=batch_size)
        tt = w0 + offs
        if self.goal_mode == "window":
            goal_idx = w0 + self.window_len
        else:
            goal_idx = np.full(batch_size, t)

        adim = self.ds.actions.shape[2]
        dobs = self.obs_dim
        s_t = self.obs[traj, tt]
        goal = self.obs[traj, goal_idx]
        actions = np.empty((batch_size, H, adim))
        successors = np.empty((batch_size, H, dobs))
        for k in range(H):
            actions[:, k] = self.ds.actions[traj, tt + k]
            successors[:, k] = self.obs[traj, tt + k + 1]
        residuals = np.empty((batch_size, H + 1, dobs))
        residuals[:, 0] = goal - s_t
        for k in range(1, H + 1):
            residuals[:, k] = goal - successors[:, k - 1]
        return WindowBatch(s_t=s_t, actions=actions, successors=successors,
                           goal=goal, residuals=residuals)
