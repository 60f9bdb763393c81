"""Closed-loop episodes, method ablations, metric tables, and plots.

Every method shares the same episode loop, planner, and simulator; they
differ only in how the subgoal chain is (re)generated:

    ours                     adaptive depth, conditioned, redistribution
    mppi_only                chain = [goal]
    fixed_finest_resolution  always refine to the last hierarchy level
    no_coarse_to_fine        adaptive depth, but levels sampled without
                             previous-level conditioning
    no_redistribution        equal-spacing upsampling of the latents
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import datastore, diffusion, mppi, reachability, subgoal_planner, world2d
from .config import LEARNED_METHODS, METHODS, RunConfig
from .diffusion import NoiseSchedule, SubgoalChain, SubgoalDenoiser
from .mppi import MppiConfig, NominalPlan
from .reachability import DistanceModel
from .subgoal_planner import Hierarchy
from .world2d import ChainState, EnvConfig, ensure_rng


@dataclass
class ModelBundle:
    """Frozen models plus the scene feature the denoiser was trained with."""
    denoiser: SubgoalDenoiser | None
    schedule: NoiseSchedule | None
    distance: DistanceModel | None
    sdf_feat: np.ndarray | None
    hierarchy: Hierarchy = field(default_factory=Hierarchy)
    endpoint_mode: str = "noised"


@dataclass
class EpisodeReport:
    method: str
    case_id: int
    distances: list
    min_distance: float
    success: bool
    subgoal_counts: list          # (step, chain length) at each regeneration
    wall_clock: float
    gripper_path: np.ndarray      # (T, 2)
    chain_snapshots: list         # (step, goals (M, K, 2)) at each regeneration
    start_obj: np.ndarray
    goal_obj: np.ndarray


def goal_distance(o_now: np.ndarray, o_goal: np.ndarray) -> float:
    return float(np.linalg.norm((o_now - o_goal).ravel()))


def make_chain_factory(method: str, bundle: ModelBundle, horizon: int):
    """Returns regen(o_now, o_goal, rng) -> SubgoalChain for the method."""
    if method not in METHODS:
        raise ValueError(f"unknown method: {method}")
    if method == "mppi_only":
        def regen(o_now, o_goal, rng):
            return SubgoalChain(goals=np.asarray(o_goal, dtype=np.float64)[None])
        return regen

    if bundle.denoiser is None or bundle.distance is None:
        raise ValueError(f"method {method} needs trained models")
    den, sched, dist = bundle.denoiser, bundle.schedule, bundle.distance

    def sample_fn(o_cur, o_G, cond, m, rng):
        return diffusion.sample_level(
            den, sched, o_cur, o_G, cond, m, rng, sdf_feat=bundle.sdf_feat,
            endpoint_mode=bundle.endpoint_mode).goals

    def encode_fn(flat_states):
        return den.encode(flat_states).data

    def d_fn(a, b):
        return np.atleast_1d(reachability.d_hat(dist, a, b))

    redistribute = method != "no_redistribution"
    adaptive = method != "fixed_finest_resolution"
    conditioned = method != "no_coarse_to_fine"

    def regen(o_now, o_goal, rng):
        return subgoal_planner.generate_subgoals(
            o_now, o_goal, sample_fn, encode_fn, d_fn, bundle.hierarchy,
            horizon, rng, redistribute=redistribute, adaptive=adaptive,
            conditioned=conditioned)
    return regen


def run_episode(env: EnvConfig, bundle: ModelBundle, method: str,
                start_state: ChainState, goal_obj: np.ndarray, mcfg: MppiConfig,
                budget: int, eps_success: float, eps_reach: float, rng_seed,
                case_id: int = 0) -> EpisodeReport:
    """Execute one episode: regenerate every 10 steps, prune, plan, step."""
    rng = ensure_rng(rng_seed)
    regen = make_chain_factory(method, bundle, mcfg.horizon)
    t_start = time.perf_counter()

    state = start_state
    goal_obj = np.asarray(goal_obj, dtype=np.float64)
    o_now = world2d.keypoints(state)
    distances = [goal_distance(o_now, goal_obj)]
    path = [state.joints[-1].copy()]
    counts: list = []
    snapshots: list = []
    chain = None
    nominal = NominalPlan.zeros(mcfg.horizon)
    prev_u = np.zeros(2)
    success = distances[0] <= eps_success

    if not success:
        for step in range(budget):
            if subgoal_planner.should_regenerate(step):
                chain = regen(o_now, goal_obj, rng)
                counts.append((step, len(chain)))
                snapshots.append((step, chain.goals.copy()))
            chain = subgoal_planner.prune_reached(chain, o_now, eps_reach)
            n_iters = mcfg.iters_first if step == 0 else mcfg.iters_later
            u, nominal = mppi.plan(env, state, chain, mcfg, nominal, rng,
                                   n_iters=n_iters, prev_u=prev_u)
            state = world2d.step(env, state, u)
            prev_u = u
            o_now = world2d.keypoints(state)
            distances.append(goal_distance(o_now, goal_obj))
            path.append(state.joints[-1].copy())
            if distances[-1] <= eps_success:
                success = True
                break

    return EpisodeReport(
        method=method, case_id=case_id, distances=distances,
        min_distance=float(min(distances)), success=success,
        subgoal_counts=counts, wall_clock=time.perf_counter() - t_start,
        gripper_path=np.asarray(path), chain_snapshots=snapshots,
        start_obj=world2d.keypoints(start_state), goal_obj=goal_obj,
    )


# -- case generation -----------------------------------------------------------


def make_cases(env: EnvConfig, cfg: RunConfig, rng_seed) -> list[tuple[ChainState, np.ndarray]]:
    """Seeded start/goal pairs, shared across methods."""
    ev = cfg.eval
    root = np.random.SeedSequence(rng_seed)
    cases = []
    for seq in root.spawn(ev.n_cases):
        rng = np.random.default_rng(seq)
        if ev.task == "point_goal":
            while True:
                start = np.asarray(ev.start) + rng.uniform(-ev.jitter, ev.jitter, 2)
                goal = np.asarray(ev.goal) + rng.uniform(-ev.jitter, ev.jitter, 2)
                if (world2d.sdf_query(env.sdf, start) >= env.clearance
                        and world2d.sdf_query(env.sdf, goal) >= env.clearance):
                    break
            state = ChainState(joints=start[None, :], link_length=env.link_length)
            cases.append((state, goal[None, :]))
        elif ev.task == "chain_reconfig":
            state = world2d.initial_state(env, rng)
            n_steps = int(rng.integers(ev.goal_rollout_lo, ev.goal_rollout_hi + 1))
            states, _ = datastore.rollout_random_policy(
                env, state.joints[None], [rng], n_steps,
                datastore.CollectConfig(n_samples=cfg.collect.n_samples,
                                        horizon=cfg.collect.horizon,
                                        iters=cfg.collect.iters,
                                        sigma_scale=cfg.collect.sigma_scale))
            cases.append((state, states[0, -1].copy()))
        else:
            raise ValueError(f"unknown eval task: {ev.task}")
    return cases


def evaluate_suite(env: EnvConfig, bundle: ModelBundle, cfg: RunConfig,
                   rng_seed, verbose: bool = True) -> list[EpisodeReport]:
    """All methods on the same seeded cases; per-episode seeds are fixed
    per (method, case) so method lists can be changed without reshuffling."""
    mcfg = _mppi_config(env, cfg)
    cases = make_cases(env, cfg, rng_seed)
    reports = []
    for method in cfg.eval.methods:
        for case_id, (start_state, goal_obj) in enumerate(cases):
            ep_seed = np.random.SeedSequence((rng_seed, METHODS.index(method), case_id))
            rep = run_episode(env, bundle, method, start_state, goal_obj, mcfg,
                              cfg.eval.budget, cfg.eval.eps_success,
                              cfg.eval.eps_reach, ep_seed, case_id=case_id)
            reports.append(rep)
            if verbose:
                print(f"  {method:24s} case {case_id:2d}: min dist "
                      f"{rep.min_distance:.4f}  success={rep.success}  "
                      f"({rep.wall_clock:.1f}s)")
    return reports


def _mppi_config(env: EnvConfig, cfg: RunConfig) -> MppiConfig:
    m = cfg.mppi
    sigma = m.sigma_u if m.sigma_u is not None else 0.05 * env.u_max
    return MppiConfig(n_samples=m.n_samples, horizon=m.horizon, sigma_u=sigma,
                      lambda_w=m.lambda_w, lambda_remote=m.lambda_remote,
                      gamma=m.gamma, lambda_col=m.lambda_col,
                      lambda_smooth=m.lambda_smooth, iters_first=m.iters_first,
                      iters_later=m.iters_later)


# -- reporting -------------------------------------------------------------------


def summarize(reports: list[EpisodeReport]) -> list[dict]:
    methods = []
    for r in reports:
        if r.method not in methods:
            methods.append(r.method)
    rows = []
    for method in methods:
        group = [r for r in reports if r.method == method]
        mins = np.array([r.min_distance for r in group])
        rows.append({
            "method": method,
            "n_cases": len(group),
            "mean_min_distance": float(mins.mean()),
            "std_min_distance": float(mins.std()),
            "success_rate": float(np.mean([r.success for r in group])),
            "mean_wall_clock": float(np.mean([r.wall_clock for r in group])),
        })
    return rows


def emit_report(reports: list[EpisodeReport], out_dir, env: EnvConfig) -> list[str]:
    """Write results.csv, summary.csv, and one workspace SVG per episode."""
    if not reports:
        raise ValueError("no reports to emit")
    import os
    os.makedirs(out_dir, exist_ok=True)
    written = []

    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "case", "step", "distance"])
        for r in reports:
            for step, d in enumerate(r.distances):
                writer.writerow([r.method, r.case_id, step, repr(d)])
    written.append(results_path)

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["method", "n_cases", "mean_min_distance",
                         "std_min_distance", "success_rate", "mean_wall_clock"])
        for row in summarize(reports):
            writer.writerow([row["method"], row["n_cases"],
                             repr(row["mean_min_distance"]),
                             repr(row["std_min_distance"]),
                             repr(row["success_rate"]),
                             f"{row['mean_wall_clock']:.3f}"])
    written.append(summary_path)

    for r in reports:
        svg_path = os.path.join(out_dir, f"episode_{r.method}_{r.case_id:03d}.svg")
        with open(svg_path, "w") as f:
            f.write(episode_svg(r, env))
        written.append(svg_path)
    return written


def _svg_pt(p) -> str:
    # workspace [-1,1]^2 -> 400x400 viewport, y up
    x = (p[0] + 1.0) * 200.0
    y = (1.0 - p[1]) * 200.0
    return f"{x:.2f},{y:.2f}"


def episode_svg(report: EpisodeReport, env: EnvConfig) -> str:
    """Workspace picture: obstacles, start/goal, gripper path, and one
    polyline per subgoal-chain snapshot."""
    grid = env.sdf
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        'viewBox="0 0 400 400" width="400" height="400">',
        '<rect x="0" y="0" width="400" height="400" fill="#fafafa"/>',
    ]
    h, w = grid.values.shape
    cell = grid.cell_size
    px = cell * 200.0
    for iy in range(h):
        for ix in range(w):
            if grid.values[iy, ix] < 0:
                cx = grid.origin[0] + ix * cell
                cy = grid.origin[1] + iy * cell
                x = (cx + 1.0) * 200.0 - px / 2
                y = (1.0 - cy) * 200.0 - px / 2
                parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{px:.1f}" '
                             f'height="{px:.1f}" fill="#444444"/>')
    for step, goals in report.chain_snapshots:
        centers = goals.mean(axis=1)
        pts = " ".join(_svg_pt(c) for c in centers)
        parts.append(f'<polyline class="subgoal-chain" data-step="{step}" '
                     f'points="{pts}" fill="none" stroke="#e8a33d" '
                     f'stroke-width="1.5" opacity="0.6"/>')
    if len(report.gripper_path) > 1:
        pts = " ".join(_svg_pt(p) for p in report.gripper_path)
        parts.append(f'<polyline class="gripper-path" points="{pts}" fill="none" '
                     f'stroke="#2b6cb0" stroke-width="2"/>')
    start_c = report.start_obj.mean(axis=0)
    goal_c = report.goal_obj.mean(axis=0)
    parts.append(f'<circle cx="{(start_c[0]+1)*200:.1f}" cy="{(1-start_c[1])*200:.1f}" '
                 f'r="5" fill="#38a169"/>')
    parts.append(f'<circle cx="{(goal_c[0]+1)*200:.1f}" cy="{(1-goal_c[1])*200:.1f}" '
                 f'r="5" fill="#c53030"/>')
    goal_pts = " ".join(_svg_pt(p) for p in report.goal_obj)
    parts.append(f'<polyline class="goal-state" points="{goal_pts}" fill="none" '
                 f'stroke="#c53030" stroke-width="1" stroke-dasharray="3,2"/>')
    parts.append("</svg>")
    return "\n".join(parts)
