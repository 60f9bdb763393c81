"""Offline random-policy dataset: collection, persistence, batch sampling.

The random policy repeatedly samples a free-space gripper target and plans
toward it with a lightweight MPPI, recording every visited state. Batches
for the two learned models are drawn from truncations of these streams.

States are already normalized: the workspace is [-1, 1]^2 and all learned
models operate directly in it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import mppi, world2d
from .world2d import EnvConfig, ensure_rng

FORMAT_NAME = "subgoal-mpc/v1"
MAX_GAP_SAMPLED = 80
N_BINS = 40


@dataclass
class Trajectory:
    states: np.ndarray    # (T, K, 2)
    controls: np.ndarray  # (T-1, 2)
    env_id: str


@dataclass
class Dataset:
    header: dict
    trajectories: list[Trajectory]
    sdf_feature: np.ndarray | None = None

    @property
    def K(self) -> int:
        return int(self.header["K"])

    def __len__(self) -> int:
        return len(self.trajectories)

    def attach_scene(self, grid: world2d.SdfGrid, pool: int = 6):
        self.sdf_feature = world2d.sdf_global_feature(grid, pool=pool)
        return self


@dataclass
class SubgoalBatch:
    current: np.ndarray       # (K, 2)
    goal: np.ndarray          # (K, 2)
    targets: np.ndarray       # (M_l, K, 2)
    conditioning: np.ndarray  # (M_{l-1}, K, 2), noise-corrupted
    level: int
    sdf_feature: np.ndarray | None


@dataclass
class DistancePair:
    o_a: np.ndarray
    o_b: np.ndarray
    k: int  # travel-time bin, 1..40 (gaps > 40 clip to the last bin)


@dataclass
class CollectConfig:
    """Planner settings for the random policy; lighter than the control
    planner since it only needs diverse collision-free motion."""
    n_samples: int = 16
    horizon: int = 5
    iters: int = 1
    sigma_scale: float = 0.5   # action noise = sigma_scale * u_max
    retarget_every: int = 30
    reach_eps: float = 0.05


def default_header(K: int, traj_len: int) -> dict:
    return {
        "format": FORMAT_NAME,
        "K": K,
        "traj_len": traj_len,
        "normalization": {"lo": [-1, -1], "hi": [1, 1]},
    }


def rollout_random_policy(env: EnvConfig, joints: np.ndarray, gens: list,
                          n_steps: int, cfg: CollectConfig | None = None
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Advance a batch of states under the random target-chasing policy.

    joints (B, K, 2); gens holds one Generator per row (each row consumes
    only its own stream, so batch composition never changes results).
    Returns (states (B, n_steps+1, K, 2), controls (B, n_steps, 2)).
    """
    cfg = cfg or CollectConfig()
    pcfg = mppi.MppiConfig(n_samples=cfg.n_samples, horizon=cfg.horizon,
                           sigma_u=cfg.sigma_scale * env.u_max,
                           iters_first=cfg.iters, iters_later=cfg.iters)
    b = joints.shape[0]
    targets = np.stack([world2d.sample_free_target(env, g) for g in gens])
    since_target = np.zeros(b, dtype=int)
    nominals = np.zeros((b, cfg.horizon, 2))
    prev_us = np.zeros((b, 2))

    states = np.empty((b, n_steps + 1, env.K, 2))
    controls = np.empty((b, n_steps, 2))
    states[:, 0] = joints

    for t in range(n_steps):
        grip = joints[:, -1, :]
        reached = np.linalg.norm(grip - targets, axis=1) <= cfg.reach_eps
        stale = since_target >= cfg.retarget_every
        for i in np.flatnonzero(reached | stale):
            targets[i] = world2d.sample_free_target(env, gens[i])
            since_target[i] = 0
        for _ in range(cfg.iters):
            noise = np.stack([
                g.normal(0.0, pcfg.sigma_u, size=(pcfg.n_samples, pcfg.horizon, 2))
                for g in gens
            ])
            nominals = mppi.plan_point_batch(env, joints, targets, nominals,
                                             pcfg, noise, prev_us)
        u = nominals[:, 0, :].copy()
        joints = world2d.step_batch(env, joints, u)
        controls[:, t] = u
        states[:, t + 1] = joints
        prev_us = u
        nominals = np.concatenate([nominals[:, 1:], nominals[:, -1:]], axis=1)
        since_target += 1
    return states, controls


def collect_dataset(env: EnvConfig, n_traj: int, traj_len: int, rng_seed,
                    env_id: str = "env", collect_cfg: CollectConfig | None = None,
                    path=None, chunk: int = 256, verify: bool = True) -> Dataset:
    """Roll the random policy for n_traj trajectories of traj_len states.

    Trajectories are advanced in parallel chunks for speed, but every
    trajectory consumes only its own spawned generator, so results are
    identical to collecting one at a time. Writes JSONL when path is given.
    """
    cfg = collect_cfg or CollectConfig()
    root = np.random.SeedSequence(rng_seed)
    children = root.spawn(n_traj)

    trajectories: list[Trajectory] = []
    for lo in range(0, n_traj, chunk):
        hi = min(lo + chunk, n_traj)
        gens = [np.random.default_rng(children[i]) for i in range(lo, hi)]
        joints = np.stack([world2d.initial_state(env, g).joints for g in gens])
        states, controls = rollout_random_policy(env, joints, gens, traj_len - 1, cfg)
        for i in range(hi - lo):
            trajectories.append(Trajectory(states=states[i].copy(),
                                           controls=controls[i].copy(), env_id=env_id))

    dataset = Dataset(header=default_header(env.K, traj_len), trajectories=trajectories)
    dataset.attach_scene(env.sdf)
    if verify:
        err = verify_replay(dataset, env)
        if err > 1e-6:
            raise RuntimeError(f"replay check failed: max state error {err:.3e}")
    if path is not None:
        write_dataset(path, dataset)
    return dataset


def verify_replay(dataset: Dataset, env: EnvConfig) -> float:
    """Re-step every stored control; returns the worst state mismatch."""
    worst = 0.0
    lengths = {t.states.shape[0] for t in dataset.trajectories}
    for tlen in lengths:
        group = [t for t in dataset.trajectories if t.states.shape[0] == tlen]
        states = np.stack([t.states for t in group])
        controls = np.stack([t.controls for t in group])
        cur = states[:, 0]
        for t in range(tlen - 1):
            cur = world2d.step_batch(env, cur, controls[:, t])
            worst = max(worst, float(np.abs(cur - states[:, t + 1]).max()))
    return worst


# -- persistence -----------------------------------------------------------


def write_dataset(path, dataset: Dataset):
    with open(path, "w") as f:
        f.write(json.dumps(dataset.header) + "\n")
        for traj in dataset.trajectories:
            rec = {
                "env_id": traj.env_id,
                "states": traj.states.tolist(),
                "controls": traj.controls.tolist(),
            }
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_dataset(path) -> Dataset:
    with open(path) as f:
        header = json.loads(f.readline())
        if header.get("format") != FORMAT_NAME:
            raise ValueError(f"unsupported dataset format: {header.get('format')}")
        trajectories = []
        for line in f:
            rec = json.loads(line)
            trajectories.append(Trajectory(
                states=np.asarray(rec["states"], dtype=np.float64),
                controls=np.asarray(rec["controls"], dtype=np.float64),
                env_id=rec["env_id"],
            ))
    return Dataset(header=header, trajectories=trajectories)


# -- batch sampling ----------------------------------------------------------


def subsample_indices(t0: int, t1: int, m: int) -> np.ndarray:
    """m equally spaced indices over [t0, t1], endpoints included;
    fractional positions round to nearest."""
    span = t1 - t0
    pos = t0 + np.floor(np.arange(m) * span / (m - 1) + 0.5)
    return pos.astype(int)


def sample_subgoal_batch(dataset: Dataset, hierarchy, batch_size: int,
                         sigma_cond: float, rng_seed) -> list[SubgoalBatch]:
    """Draw training items: a truncation, its M_l equally spaced states as
    targets, and M_{l-1} equally spaced states (noised) as conditioning."""
    hierarchy = list(hierarchy)
    if hierarchy[0] != 2 or any(b <= a for a, b in zip(hierarchy, hierarchy[1:])):
        raise ValueError("hierarchy must be strictly increasing and start at 2")
    rng = ensure_rng(rng_seed)
    out: list[SubgoalBatch] = []
    n = len(dataset.trajectories)
    while len(out) < batch_size:
        traj = dataset.trajectories[int(rng.integers(n))]
        tlen = traj.states.shape[0]
        level = int(rng.integers(1, len(hierarchy)))
        m_l, m_prev = hierarchy[level], hierarchy[level - 1]
        if tlen < m_l:
            continue
        length = int(rng.integers(m_l, tlen + 1))
        t0 = int(rng.integers(0, tlen - length + 1))
        t1 = t0 + length - 1
        targets = traj.states[subsample_indices(t0, t1, m_l)].copy()
        cond = traj.states[subsample_indices(t0, t1, m_prev)].copy()
        if sigma_cond > 0:
            cond = cond + rng.normal(0.0, sigma_cond, size=cond.shape)
        out.append(SubgoalBatch(
            current=traj.states[t0].copy(), goal=traj.states[t1].copy(),
            targets=targets, conditioning=cond, level=level,
            sdf_feature=dataset.sdf_feature,
        ))
    return out


def sample_distance_pairs(dataset: Dataset, batch_size: int, rng_seed) -> list[DistancePair]:
    """Uniform (state, later state) pairs; the travel-time label is the
    index gap clipped to the last bin. Gaps are drawn up to 80 steps so
    the final bin receives genuine beyond-horizon mass."""
    rng = ensure_rng(rng_seed)
    out: list[DistancePair] = []
    n = len(dataset.trajectories)
    if n == 0:
        raise ValueError("dataset is empty")
    while len(out) < batch_size:
        traj = dataset.trajectories[int(rng.integers(n))]
        tlen = traj.states.shape[0]
        if tlen < 2:
            continue
        i = int(rng.integers(0, tlen - 1))
        gap = int(rng.integers(1, min(tlen - 1 - i, MAX_GAP_SAMPLED) + 1))
        out.append(DistancePair(o_a=traj.states[i].copy(),
                                o_b=traj.states[i + gap].copy(),
                                k=min(gap, N_BINS)))
    return out


# -- synthetic data -----------------------------------------------------------


def make_line_dataset(n_traj: int = 1000, traj_len: int = 24, rng_seed=0) -> Dataset:
    """Straight-line point trajectories; the sanity benchmark for training."""
    rng = ensure_rng(rng_seed)
    trajectories = []
    ts = np.linspace(0.0, 1.0, traj_len)[:, None]
    for _ in range(n_traj):
        a = rng.uniform(-0.8, 0.8, 2)
        b = rng.uniform(-0.8, 0.8, 2)
        pts = a[None, :] + ts * (b - a)[None, :]
        states = pts[:, None, :]
        controls = np.diff(pts, axis=0)
        trajectories.append(Trajectory(states=states, controls=controls, env_id="line"))
    ds = Dataset(header=default_header(1, traj_len), trajectories=trajectories)
    ds.sdf_feature = np.zeros(36)
    return ds
