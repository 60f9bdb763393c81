"""Run configuration: one JSON file drives collect/train/eval.

The schema is documented in the README; unknown keys are rejected so a
typo fails fast instead of silently using a default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from . import world2d
from .world2d import EnvConfig


class ConfigError(ValueError):
    pass


METHODS = ("ours", "mppi_only", "fixed_finest_resolution",
           "no_coarse_to_fine", "no_redistribution")
LEARNED_METHODS = ("ours", "fixed_finest_resolution",
                   "no_coarse_to_fine", "no_redistribution")


def _from_dict(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    return cls(**data)


@dataclass
class EnvSpec:
    kind: str = "point_mass"
    scene: str = "empty"
    grid_n: int = 96
    border: float | None = 0.95
    K: int | None = None
    link_length: float = 0.12
    u_max: float | None = None
    projection_iters: int = 20
    sdf_path: str | None = None

    def build(self) -> EnvConfig:
        if self.sdf_path is not None:
            sdf = world2d.load_sdf(self.sdf_path)
        else:
            sdf = world2d.make_scene(self.scene, n=self.grid_n, border=self.border)
        if self.kind == "point_mass":
            return EnvConfig(kind="point_mass", K=1, link_length=1.0,
                             u_max=self.u_max if self.u_max is not None else 0.05,
                             sdf=sdf, projection_iters=self.projection_iters)
        if self.kind == "chain":
            return EnvConfig(kind="chain", K=self.K if self.K is not None else 10,
                             link_length=self.link_length,
                             u_max=self.u_max if self.u_max is not None else 0.04,
                             sdf=sdf, projection_iters=self.projection_iters)
        raise ConfigError(f"unknown env kind: {self.kind}")


@dataclass
class CollectSpec:
    n_traj: int = 2000
    traj_len: int = 100
    n_samples: int = 16
    horizon: int = 5
    iters: int = 1
    sigma_scale: float = 0.5
    retarget_every: int = 30
    reach_eps: float = 0.05


@dataclass
class DiffusionSpec:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 2e-3
    sigma_cond: float = 0.03
    cond_dropout: float = 0.1
    K_steps: int = 50
    endpoint_mode: str = "noised"
    hierarchy: list = field(default_factory=lambda: [2, 3, 5, 7, 9, 17])


@dataclass
class DistanceSpec:
    epochs: int = 30
    batches_per_epoch: int = 60
    batch_size: int = 256
    lr: float = 1e-3
    hidden: int = 128
    alpha: float = 1.0


@dataclass
class MppiSpec:
    n_samples: int = 80
    horizon: int = 10
    sigma_u: float | None = None  # null -> 0.05 * u_max (desk scale)
    lambda_w: float = 0.02
    lambda_remote: float = 0.02
    gamma: float = 0.6
    lambda_col: float = 10.0
    lambda_smooth: float = 0.001
    iters_first: int = 5
    iters_later: int = 2


@dataclass
class EvalSpec:
    methods: list = field(default_factory=lambda: ["ours", "mppi_only"])
    n_cases: int = 10
    budget: int = 350
    eps_success: float = 0.05
    eps_reach: float = 0.05
    task: str = "point_goal"  # or "chain_reconfig"
    start: list = field(default_factory=lambda: [-0.6, 0.0])
    goal: list = field(default_factory=lambda: [0.35, 0.0])
    jitter: float = 0.06
    goal_rollout_lo: int = 40
    goal_rollout_hi: int = 80

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; options: {METHODS}")


@dataclass
class RunConfig:
    name: str = "run"
    seed: int = 0
    out_dir: str = "runs/out"
    env: EnvSpec = field(default_factory=EnvSpec)
    collect: CollectSpec = field(default_factory=CollectSpec)
    diffusion: DiffusionSpec = field(default_factory=DiffusionSpec)
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    mppi: MppiSpec = field(default_factory=MppiSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        sections = {
            "env": EnvSpec, "collect": CollectSpec, "diffusion": DiffusionSpec,
            "distance": DistanceSpec, "mppi": MppiSpec, "eval": EvalSpec,
        }
        kwargs = {}
        for key, section_cls in sections.items():
            if key in data:
                kwargs[key] = _from_dict(section_cls, data.pop(key), key)
        known = {"name", "seed", "out_dir"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
        kwargs.update(data)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")
