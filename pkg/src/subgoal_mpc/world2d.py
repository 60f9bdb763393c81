"""Deterministic planar environments with SDF obstacles.

Two kinds: a fixed-base kinematic chain (the "rope": joint 0 pinned, last
joint dragged by the gripper) and a free point mass. Both live in the
normalized workspace [-1, 1]^2 and share one transition function used by
MPC rollouts, dataset collection, and execution.

All randomness flows through explicit numpy Generators; stepping is a pure
function of its inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels

WORKSPACE_LO = -1.0
WORKSPACE_HI = 1.0


class NoFreeSpaceError(RuntimeError):
    """Raised when rejection sampling cannot find a free-space point."""


def ensure_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# -- signed distance grid ------------------------------------------------


@dataclass(frozen=True)
class SdfGrid:
    """Regular grid of signed distances; positive means free space.

    values is (height, width), row-major, with values[iy, ix] sampled at
    origin + cell_size * (ix, iy). Queries outside the grid clamp to the
    nearest cell.
    """

    origin: np.ndarray
    cell_size: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))
        if self.values.ndim != 2 or min(self.values.shape) < 2:
            raise ValueError("SDF grid must be at least 2x2")
        if not np.all(np.isfinite(self.values)) or not self.cell_size > 0:
            raise ValueError("SDF grid values and cell size must be finite/positive")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def sdf_query(grid: SdfGrid, p) -> np.ndarray | float:
    """Bilinear SDF lookup at p (..., 2); out-of-bounds clamps to the edge."""
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 1
    pts = np.atleast_2d(p)
    g = (pts - grid.origin) / grid.cell_size
    gx = np.clip(g[..., 0], 0.0, grid.width - 1.0)
    gy = np.clip(g[..., 1], 0.0, grid.height - 1.0)
    ix = np.clip(np.floor(gx).astype(np.int64), 0, grid.width - 2)
    iy = np.clip(np.floor(gy).astype(np.int64), 0, grid.height - 2)
    fx = gx - ix
    fy = gy - iy
    v = grid.values
    v00 = v[iy, ix]
    v01 = v[iy, ix + 1]
    v10 = v[iy + 1, ix]
    v11 = v[iy + 1, ix + 1]
    out = (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy
    return float(out[0]) if scalar else out.reshape(p.shape[:-1])


def sdf_gradient(grid: SdfGrid, p) -> np.ndarray:
    """Central finite-difference gradient of the interpolated SDF."""
    p = np.asarray(p, dtype=np.float64)
    h = 0.5 * grid.cell_size
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    gx = (sdf_query(grid, p + ex) - sdf_query(grid, p - ex)) / (2 * h)
    gy = (sdf_query(grid, p + ey) - sdf_query(grid, p - ey)) / (2 * h)
    return np.stack([gx, gy], axis=-1)


def sdf_to_json(grid: SdfGrid) -> dict:
    return {
        "origin": [float(grid.origin[0]), float(grid.origin[1])],
        "cell_size": float(grid.cell_size),
        "width": grid.width,
        "height": grid.height,
        "values": [float(v) for v in grid.values.ravel()],
    }


def sdf_from_json(obj: dict) -> SdfGrid:
    values = np.asarray(obj["values"], dtype=np.float64).reshape(obj["height"], obj["width"])
    return SdfGrid(origin=np.asarray(obj["origin"]), cell_size=obj["cell_size"], values=values)


def save_sdf(grid: SdfGrid, path):
    with open(path, "w") as f:
        json.dump(sdf_to_json(grid), f)


def load_sdf(path) -> SdfGrid:
    with open(path) as f:
        return sdf_from_json(json.load(f))


def sdf_global_feature(grid: SdfGrid, pool: int = 6) -> np.ndarray:
    """Condense the whole grid into a fixed-length vector by block pooling."""
    h, w = grid.values.shape
    ys = np.linspace(0, h, pool + 1).astype(int)
    xs = np.linspace(0, w, pool + 1).astype(int)
    feat = np.empty(pool * pool)
    k = 0
    for i in range(pool):
        for j in range(pool):
            feat[k] = grid.values[ys[i]:ys[i + 1], xs[j]:xs[j + 1]].mean()
            k += 1
    return feat


# -- scene construction ---------------------------------------------------


def _grid_points(n: int):
    coords = np.linspace(WORKSPACE_LO, WORKSPACE_HI, n)
    xx, yy = np.meshgrid(coords, coords)
    return np.stack([xx, yy], axis=-1), coords[1] - coords[0]


def _disk_sdf(p, center, radius):
    return np.linalg.norm(p - np.asarray(center), axis=-1) - radius


def _box_sdf(p, center, half):
    q = np.abs(p - np.asarray(center)) - np.asarray(half)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.maximum(q[..., 0], q[..., 1]), 0.0)
    return outside + inside


def _border_sdf(p, extent=0.95):
    # distance to the boundary of the free square |x|,|y| <= extent
    return extent - np.maximum(np.abs(p[..., 0]), np.abs(p[..., 1]))


def rasterize_scene(shapes: list[dict], n: int = 96, border: float | None = 0.95) -> SdfGrid:
    """Rasterize analytic obstacle primitives into an SdfGrid.

    shapes: list of {"type": "disk", "center": [x,y], "radius": r} or
    {"type": "box", "center": [x,y], "half": [hx,hy]}. The free region is
    the complement of the union; an optional square border wall keeps
    everything inside |x|,|y| < border.
    """
    pts, cell = _grid_points(n)
    sdf = np.full(pts.shape[:-1], np.inf)
    if border is not None:
        sdf = np.minimum(sdf, _border_sdf(pts, border))
    for s in shapes:
        if s["type"] == "disk":
            d = _disk_sdf(pts, s["center"], s["radius"])
        elif s["type"] == "box":
            d = _box_sdf(pts, s["center"], s["half"])
        else:
            raise ValueError(f"unknown shape type: {s['type']}")
        sdf = np.minimum(sdf, d)
    if not np.all(np.isfinite(sdf)):
        sdf = np.where(np.isfinite(sdf), sdf, 4.0)
    return SdfGrid(origin=np.array([WORKSPACE_LO, WORKSPACE_LO]), cell_size=cell, values=sdf)


SCENES: dict[str, list[dict]] = {
    "empty": [],
    "two_disks": [
        {"type": "disk", "center": [0.35, 0.25], "radius": 0.14},
        {"type": "disk", "center": [-0.25, -0.4], "radius": 0.12},
    ],
    # U-shaped trap: cup opens toward +x, goal sits inside the cup, start
    # approaches from -x and greedy control runs into the cup's back wall.
    "u_trap": [
        {"type": "box", "center": [0.3, 0.325], "half": [0.45, 0.055]},
        {"type": "box", "center": [0.3, -0.325], "half": [0.45, 0.055]},
        {"type": "box", "center": [-0.2, 0.0], "half": [0.055, 0.38]},
    ],
    "chain_obstacles": [
        {"type": "disk", "center": [0.4, 0.3], "radius": 0.13},
        {"type": "disk", "center": [0.15, -0.45], "radius": 0.11},
    ],
}


def make_scene(name: str, n: int = 96, border: float | None = 0.95) -> SdfGrid:
    if name not in SCENES:
        raise ValueError(f"unknown scene '{name}'; options: {sorted(SCENES)}")
    return rasterize_scene(SCENES[name], n=n, border=border)


# -- environment and dynamics ---------------------------------------------


@dataclass(frozen=True)
class EnvConfig:
    kind: str  # "chain" or "point_mass"
    K: int
    link_length: float
    u_max: float
    sdf: SdfGrid
    projection_iters: int = 20
    margin: float = 0.01
    clearance: float = 0.05
    base: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=np.float64))
        if self.kind not in ("chain", "point_mass"):
            raise ValueError(f"unknown env kind: {self.kind}")
        if self.kind == "chain":
            diag = (WORKSPACE_HI - WORKSPACE_LO) * np.sqrt(2.0)
            if self.K * self.link_length > diag:
                raise ValueError("chain does not fit in the workspace")

    @property
    def reach(self) -> float:
        return (self.K - 1) * self.link_length


@dataclass(frozen=True)
class ChainState:
    """K ordered joints; joint 0 is the fixed base, joint K-1 the gripper."""

    joints: np.ndarray
    link_length: float

    def __post_init__(self):
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=np.float64))

    @property
    def gripper(self) -> np.ndarray:
        return self.joints[-1]


def clamp_control(du, u_max: float) -> np.ndarray:
    """Scale du down to norm <= u_max (batched over leading dims)."""
    du = np.asarray(du, dtype=np.float64)
    norm = np.linalg.norm(du, axis=-1, keepdims=True)
    factor = np.where(norm > u_max, u_max / np.maximum(norm, 1e-300), 1.0)
    return du * factor


def step_batch(env: EnvConfig, joints: np.ndarray, du: np.ndarray) -> np.ndarray:
    """Advance a batch of states (S, K, 2) by controls (S, 2).

    Chain: the gripper target is clamped to the step limit, the reach disk,
    and free space, then projection rounds alternate obstacle pushes with
    backward/forward reaching passes that re-pin gripper and base. The
    gripper pin yields whenever it conflicts with the other constraints
    (the final pass walks from the base, so base position and link lengths
    are honored exactly and the compliant object absorbs the difference).
    """
    joints = np.asarray(joints, dtype=np.float64)
    du = clamp_control(du, env.u_max)
    grid = env.sdf
    ox, oy = float(grid.origin[0]), float(grid.origin[1])

    if env.kind == "point_mass":
        target = np.ascontiguousarray(joints[:, 0, :] + du)
        _kernels.push_points(target, env.margin, 8, grid.values, ox, oy, grid.cell_size)
        return target[:, None, :]

    base = np.ascontiguousarray(joints[:, 0, :])
    target = joints[:, -1, :] + du
    # keep the pin consistent: clamp to the reach disk, then out of obstacles
    v = target - base
    d = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.minimum(1.0, env.reach / np.maximum(d, 1e-12))
    target = np.ascontiguousarray(base + v * scale)
    _kernels.push_points(target, env.margin, 8, grid.values, ox, oy, grid.cell_size)

    p = np.ascontiguousarray(joints.copy())
    _kernels.project_chain(p, base, target, env.link_length, env.projection_iters,
                           env.margin, grid.values, ox, oy, grid.cell_size)
    return p


def step(env: EnvConfig, s: ChainState, u) -> ChainState:
    """Deterministic transition: drag the gripper by u, project constraints."""
    new_joints = step_batch(env, s.joints[None, :, :], np.asarray(u, dtype=np.float64)[None, :])[0]
    return ChainState(joints=new_joints, link_length=s.link_length)


def keypoints(s: ChainState) -> np.ndarray:
    """Object state: the K joint positions, shape (K, 2)."""
    return s.joints.copy()


def max_link_error(s: ChainState) -> float:
    if s.joints.shape[0] < 2:
        return 0.0
    lengths = np.linalg.norm(np.diff(s.joints, axis=0), axis=-1)
    return float(np.abs(lengths - s.link_length).max())


def sample_free_target(env: EnvConfig, rng_seed, clearance: float | None = None,
                       max_tries: int = 10_000) -> np.ndarray:
    """Rejection-sample a workspace point with sdf >= clearance."""
    rng = ensure_rng(rng_seed)
    clearance = env.clearance if clearance is None else clearance
    for _ in range(max_tries):
        p = rng.uniform(WORKSPACE_LO, WORKSPACE_HI, size=2)
        if sdf_query(env.sdf, p) >= clearance:
            return p
    raise NoFreeSpaceError(f"no free-space point with clearance {clearance} "
                           f"after {max_tries} tries")


def initial_state(env: EnvConfig, rng_seed) -> ChainState:
    """A feasible starting state: settled straight chain at a random angle,
    or a free point for the point-mass environment."""
    rng = ensure_rng(rng_seed)
    if env.kind == "point_mass":
        p = sample_free_target(env, rng)
        return ChainState(joints=p[None, :], link_length=env.link_length)
    theta = rng.uniform(0.0, 2 * np.pi)
    direction = np.array([np.cos(theta), np.sin(theta)])
    idx = np.arange(env.K)[:, None]
    joints = env.base[None, :] + idx * env.link_length * direction[None, :]
    s = ChainState(joints=joints, link_length=env.link_length)
    for _ in range(5):
        s = step(env, s, np.zeros(2))
    return s


def default_env(kind: str, scene: str = "empty", K: int | None = None, *,
                link_length: float = 0.12, u_max: float | None = None,
                grid_n: int = 96, projection_iters: int = 20) -> EnvConfig:
    """Convenience constructor with desk-scale defaults."""
    sdf = make_scene(scene, n=grid_n)
    if kind == "point_mass":
        return EnvConfig(kind=kind, K=1, link_length=1.0,
                         u_max=0.05 if u_max is None else u_max,
                         sdf=sdf, projection_iters=projection_iters)
    return EnvConfig(kind="chain", K=10 if K is None else K, link_length=link_length,
                     u_max=0.04 if u_max is None else u_max,
                     sdf=sdf, projection_iters=projection_iters)
