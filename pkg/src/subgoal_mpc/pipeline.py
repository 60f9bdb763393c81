"""Stage runners shared by the CLI and the acceptance suite.

Artifacts live under the run's out_dir: dataset.jsonl, denoiser.ckpt,
distance.ckpt, then results.csv / summary.csv / episode_*.svg from eval.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import datastore, diffusion, harness, reachability, world2d
from .config import LEARNED_METHODS, RunConfig
from .diffusion import DiffusionTrainConfig, SubgoalDenoiser, make_schedule
from .reachability import DistanceModel, DistanceTrainConfig
from .subgoal_planner import Hierarchy


def paths(cfg: RunConfig) -> dict:
    d = cfg.out_dir
    return {
        "dataset": os.path.join(d, "dataset.jsonl"),
        "denoiser": os.path.join(d, "denoiser.ckpt"),
        "denoiser_meta": os.path.join(d, "denoiser_meta.json"),
        "distance": os.path.join(d, "distance.ckpt"),
        "out": d,
    }


def run_collect(cfg: RunConfig, verbose: bool = True) -> datastore.Dataset:
    env = cfg.env.build()
    os.makedirs(cfg.out_dir, exist_ok=True)
    c = cfg.collect
    if verbose:
        print(f"collecting {c.n_traj} x {c.traj_len} ({cfg.env.kind}, scene "
              f"{cfg.env.scene}) ...")
    dataset = datastore.collect_dataset(
        env, c.n_traj, c.traj_len, rng_seed=cfg.seed, env_id=cfg.name,
        collect_cfg=datastore.CollectConfig(
            n_samples=c.n_samples, horizon=c.horizon, iters=c.iters,
            sigma_scale=c.sigma_scale, retarget_every=c.retarget_every,
            reach_eps=c.reach_eps),
        path=paths(cfg)["dataset"])
    if verbose:
        print(f"wrote {paths(cfg)['dataset']}")
    return dataset


def load_dataset(cfg: RunConfig) -> datastore.Dataset:
    env = cfg.env.build()
    dataset = datastore.load_dataset(paths(cfg)["dataset"])
    dataset.attach_scene(env.sdf)
    return dataset


def run_train_diffusion(cfg: RunConfig, dataset=None, verbose: bool = True):
    dataset = dataset if dataset is not None else load_dataset(cfg)
    d = cfg.diffusion
    tcfg = DiffusionTrainConfig(
        hierarchy=tuple(d.hierarchy), steps=d.steps, batch_size=d.batch_size,
        lr=d.lr, sigma_cond=d.sigma_cond, cond_dropout=d.cond_dropout,
        K_steps=d.K_steps)
    denoiser, schedule, losses = diffusion.train_diffusion(
        dataset, tcfg, rng_seed=cfg.seed, log_every=200 if verbose else 0)
    p = paths(cfg)
    denoiser.save(p["denoiser"])
    with open(p["denoiser_meta"], "w") as f:
        json.dump({"K_steps": d.K_steps, "hierarchy": list(d.hierarchy),
                   "endpoint_mode": d.endpoint_mode,
                   "final_loss": float(np.mean(losses[-50:]))}, f)
    if verbose:
        print(f"wrote {p['denoiser']} (final loss {np.mean(losses[-50:]):.4f})")
    return denoiser, schedule, losses


def run_train_distance(cfg: RunConfig, dataset=None, verbose: bool = True):
    dataset = dataset if dataset is not None else load_dataset(cfg)
    d = cfg.distance
    tcfg = DistanceTrainConfig(
        epochs=d.epochs, batches_per_epoch=d.batches_per_epoch,
        batch_size=d.batch_size, lr=d.lr, hidden=d.hidden, alpha=d.alpha,
        horizon=cfg.mppi.horizon)
    model, losses = reachability.train_distance_model(
        dataset, tcfg, rng_seed=cfg.seed, log_every=10 if verbose else 0)
    model.save(paths(cfg)["distance"])
    if verbose:
        print(f"wrote {paths(cfg)['distance']} (final loss {losses[-1]:.4f})")
    return model, losses


def load_bundle(cfg: RunConfig, env=None) -> harness.ModelBundle:
    """Load trained models for evaluation; learned methods require both
    checkpoints to exist."""
    env = env or cfg.env.build()
    p = paths(cfg)
    needs_models = any(m in LEARNED_METHODS for m in cfg.eval.methods)
    denoiser = schedule = distance = None
    endpoint_mode = cfg.diffusion.endpoint_mode
    if needs_models:
        for key in ("denoiser", "distance"):
            if not os.path.exists(p[key]):
                raise FileNotFoundError(
                    f"missing checkpoint {p[key]}; run the training stages first")
        denoiser = SubgoalDenoiser.load(p["denoiser"])
        distance = DistanceModel.load(p["distance"])
        with open(p["denoiser_meta"]) as f:
            meta = json.load(f)
        schedule = make_schedule(meta["K_steps"])
        endpoint_mode = meta.get("endpoint_mode", endpoint_mode)
    return harness.ModelBundle(
        denoiser=denoiser, schedule=schedule, distance=distance,
        sdf_feat=world2d.sdf_global_feature(env.sdf),
        hierarchy=Hierarchy(tuple(cfg.diffusion.hierarchy)),
        endpoint_mode=endpoint_mode)


def run_eval(cfg: RunConfig, verbose: bool = True):
    env = cfg.env.build()
    bundle = load_bundle(cfg, env)
    reports = harness.evaluate_suite(env, bundle, cfg, rng_seed=cfg.seed,
                                     verbose=verbose)
    files = harness.emit_report(reports, cfg.out_dir, env)
    if verbose:
        print(f"wrote {len(files)} files to {cfg.out_dir}")
        for row in harness.summarize(reports):
            print(f"  {row['method']:24s} min dist "
                  f"{row['mean_min_distance']:.4f} +- {row['std_min_distance']:.4f}"
                  f"  success {row['success_rate']:.0%}")
    return reports


def run_all(cfg: RunConfig, verbose: bool = True):
    dataset = run_collect(cfg, verbose=verbose)
    run_train_diffusion(cfg, dataset, verbose=verbose)
    run_train_distance(cfg, dataset, verbose=verbose)
    return run_eval(cfg, verbose=verbose)
