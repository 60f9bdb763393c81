"""Sampling-based MPC (MPPI) with a goal-set cost over subgoal chains.

Each refinement iteration samples noisy control sequences around the
nominal plan, rolls them through the simulator, scores them, and mixes
them back into the nominal by exponential weighting. The cost prefers
reaching any remaining subgoal, with a bonus for later chain indices,
plus gripper-collision and control-smoothness terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import world2d
from .world2d import EnvConfig, ChainState, clamp_control, ensure_rng, sdf_query


@dataclass
class MppiConfig:
    n_samples: int = 80
    horizon: int = 10
    sigma_u: float = 0.001
    lambda_w: float = 0.02
    lambda_remote: float = 0.02
    gamma: float = 0.6
    lambda_col: float = 10.0
    lambda_smooth: float = 0.001
    iters_first: int = 5
    iters_later: int = 2

    def __post_init__(self):
        vals = [self.n_samples, self.horizon, self.sigma_u, self.lambda_w,
                self.lambda_remote, self.lambda_col, self.lambda_smooth,
                self.iters_first, self.iters_later]
        if any(v <= 0 for v in vals) or not (0.0 < self.gamma < 1.0):
            raise ValueError("MPPI hyperparameters must be positive with gamma in (0,1)")

    @classmethod
    def for_env(cls, env: EnvConfig, **overrides) -> "MppiConfig":
        """Desk-scale defaults: action noise commensurate with the step limit."""
        overrides.setdefault("sigma_u", 0.05 * env.u_max)
        return cls(**overrides)


@dataclass
class NominalPlan:
    controls: np.ndarray  # (H, 2), each row norm <= u_max

    @classmethod
    def zeros(cls, horizon: int) -> "NominalPlan":
        return cls(controls=np.zeros((horizon, 2)))


def _as_goal_array(chain) -> np.ndarray:
    goals = getattr(chain, "goals", chain)
    return np.asarray(goals, dtype=np.float64)


def weights(costs, lambda_w: float) -> np.ndarray:
    """Exponential weights of rollout costs; min-shifted for stability."""
    costs = np.asarray(costs, dtype=np.float64)
    z = np.exp(-(costs - costs.min()) / lambda_w)
    return z / z.sum()


def remoteness_bonus(m: int, cfg: MppiConfig) -> np.ndarray:
    i = np.arange(m)
    return cfg.lambda_remote * (1.0 - cfg.gamma ** i) / (1.0 - cfg.gamma)


def chain_cost(rollout, chain, sdf, cfg: MppiConfig, prev_u=None) -> float:
    """Goal-set cost of one rollout (states (T, K, 2), controls (T, 2)).

    sum_t [ min_i(||o_t - g_i||^2 - bonus_i) + collision + smoothness ],
    where i indexes the current (pruned) chain and the bonus rewards later
    subgoals, o_t stacks all keypoints and r_t is the gripper point.
    """
    states, controls = rollout
    states = np.asarray(states, dtype=np.float64)
    controls = np.asarray(controls, dtype=np.float64)
    goals = _as_goal_array(chain)
    t, k, _ = states.shape
    m = goals.shape[0]

    flat_states = states.reshape(t, k * 2)
    flat_goals = goals.reshape(m, k * 2)
    d2 = ((flat_states[:, None, :] - flat_goals[None, :, :]) ** 2).sum(axis=2)
    goal_term = (d2 - remoteness_bonus(m, cfg)[None, :]).min(axis=1)

    grip = states[:, -1, :]
    col_term = cfg.lambda_col * np.maximum(-sdf_query(sdf, grip), 0.0)

    prev = np.zeros(2) if prev_u is None else np.asarray(prev_u, dtype=np.float64)
    shifted = np.vstack([prev[None, :], controls[:-1]])
    smooth_term = cfg.lambda_smooth * ((controls - shifted) ** 2).sum(axis=1)

    return float((goal_term + col_term + smooth_term).sum())


def rollout_batch(env: EnvConfig, state: ChainState, seqs: np.ndarray) -> np.ndarray:
    """Roll control sequences (S, H, 2) through the simulator -> (S, H, K, 2)."""
    s, h, _ = seqs.shape
    cur = np.repeat(state.joints[None, :, :], s, axis=0)
    out = np.empty((s, h, state.joints.shape[0], 2))
    for t in range(h):
        cur = world2d.step_batch(env, cur, seqs[:, t, :])
        out[:, t] = cur
    return out


def plan(env: EnvConfig, state: ChainState, chain, cfg: MppiConfig,
         nominal: NominalPlan, rng_seed, n_iters: int | None = None,
         prev_u=None) -> tuple[np.ndarray, NominalPlan]:
    """One MPC cycle: refine the nominal, return (control, shifted nominal).

    With n_iters=0 or sigma_u=0 the nominal's first control is returned
    unchanged (warm-start contract).
    """
    rng = ensure_rng(rng_seed)
    if n_iters is None:
        n_iters = cfg.iters_later
    nom = nominal.controls.copy()
    for _ in range(n_iters):
        noise = rng.normal(0.0, cfg.sigma_u, size=(cfg.n_samples, cfg.horizon, 2))
        seqs = clamp_control(nom[None, :, :] + noise, env.u_max)
        states = rollout_batch(env, state, seqs)
        costs = np.array([
            chain_cost((states[j], seqs[j]), chain, env.sdf, cfg, prev_u=prev_u)
            for j in range(cfg.n_samples)
        ])
        wts = weights(costs, cfg.lambda_w)
        nom = nom + np.einsum("s,shc->hc", wts, seqs - nom[None, :, :])
    u0 = nom[0].copy()
    shifted = np.vstack([nom[1:], nom[-1:]])
    return u0, NominalPlan(controls=shifted)


def plan_point_batch(env: EnvConfig, joints: np.ndarray, targets: np.ndarray,
                     nominals: np.ndarray, cfg: MppiConfig, noise: np.ndarray,
                     prev_us: np.ndarray) -> np.ndarray:
    """One refinement iteration for B independent gripper-target problems.

    The random data-collection policy plans toward a workspace point, so
    the goal term tracks only the gripper. joints (B, K, 2), targets
    (B, 2), nominals (B, h, 2), noise (B, S, h, 2). Returns new nominals.
    """
    b, s, h, _ = noise.shape
    seqs = clamp_control(nominals[:, None, :, :] + noise, env.u_max)
    flat = seqs.reshape(b * s, h, 2)
    cur = np.repeat(joints, s, axis=0)
    grips = np.empty((b * s, h, 2))
    for t in range(h):
        cur = world2d.step_batch(env, cur, flat[:, t, :])
        grips[:, t] = cur[:, -1, :]

    tgt = np.repeat(targets, s, axis=0)
    goal_term = ((grips - tgt[:, None, :]) ** 2).sum(axis=2)
    col_term = cfg.lambda_col * np.maximum(-sdf_query(env.sdf, grips), 0.0)
    prev = np.repeat(prev_us, s, axis=0)
    shifted = np.concatenate([prev[:, None, :], flat[:, :-1, :]], axis=1)
    smooth_term = cfg.lambda_smooth * ((flat - shifted) ** 2).sum(axis=2)
    costs = (goal_term + col_term + smooth_term).sum(axis=1).reshape(b, s)

    z = np.exp(-(costs - costs.min(axis=1, keepdims=True)) / cfg.lambda_w)
    wts = z / z.sum(axis=1, keepdims=True)
    return nominals + np.einsum("bs,bshc->bhc", wts, seqs - nominals[:, None, :, :])
