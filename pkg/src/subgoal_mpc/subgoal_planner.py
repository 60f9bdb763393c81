"""Coarse-to-fine subgoal generation and chain maintenance.

The recursion starts from the two-entry chain [current, goal] and deepens
through the hierarchy until every adjacent pair is reachable within the
MPC horizon (or the finest level is hit). Each refinement conditions the
next level on the previous chain's latents, upsampled along an arc-length
parameterization weighted by estimated pairwise travel time, so extra
subgoals land on the hard segments.

Models enter as plain callables, which keeps the orchestration testable
with stubs:
    sample_fn(o_cur, o_G, cond_latents | None, M, rng) -> (M, K, 2) array
    encode_fn(states (m, D)) -> (m, d_z) latents
    d_fn(o_a (m, K, 2), o_b (m, K, 2)) -> (m,) soft step estimates
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffusion import SubgoalChain
from .world2d import ensure_rng

REGEN_PERIOD = 10


@dataclass(frozen=True)
class Hierarchy:
    levels: tuple = (2, 3, 5, 7, 9, 17)

    def __post_init__(self):
        lv = tuple(int(x) for x in self.levels)
        object.__setattr__(self, "levels", lv)
        if lv[0] != 2 or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("hierarchy must be strictly increasing and start at 2")

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> int:
        return self.levels[i]


@dataclass
class LatentChain:
    latents: np.ndarray  # (M, d_z)
    source: SubgoalChain

    def __post_init__(self):
        if self.latents.shape[0] != len(self.source):
            raise ValueError("one latent per subgoal required")


def encode_latents(encode_fn, chain: SubgoalChain) -> LatentChain:
    """Per-subgoal latents of a chain via the conditioning encoder."""
    flat = chain.goals.reshape(len(chain), -1)
    latents = np.asarray(encode_fn(flat), dtype=np.float64)
    return LatentChain(latents=latents, source=chain)


def redistribute_upsample(latent_chain: LatentChain, d_fn, m_target: int,
                          redistribute: bool = True) -> np.ndarray:
    """Upsample latents to m_target by interpolation along the chain.

    Source latents sit at cumulative arc positions proportional to the
    estimated travel time of each segment (all segments weigh 1 when
    redistribute is off, reducing to plain equal spacing); queries are
    uniform on [0, 1].
    """
    latents = latent_chain.latents
    m_src = latents.shape[0]
    if m_target < m_src:
        raise ValueError("cannot upsample to fewer conditioning vectors")
    goals = latent_chain.source.goals
    if redistribute:
        segs = np.asarray(d_fn(goals[:-1], goals[1:]), dtype=np.float64)
    else:
        segs = np.ones(m_src - 1)
    total = segs.sum()
    if not np.isfinite(total) or total <= 1e-12:
        segs = np.ones(m_src - 1)
        total = segs.sum()
    pos = np.concatenate([[0.0], np.cumsum(segs) / total])
    pos[-1] = 1.0
    queries = np.linspace(0.0, 1.0, m_target)
    idx = np.clip(np.searchsorted(pos, queries, side="right") - 1, 0, m_src - 2)
    seg_len = pos[idx + 1] - pos[idx]
    frac = (queries - pos[idx]) / np.maximum(seg_len, 1e-300)
    frac = np.clip(frac, 0.0, 1.0)
    return latents[idx] * (1.0 - frac)[:, None] + latents[idx + 1] * frac[:, None]


def max_segment_estimate(d_fn, chain: SubgoalChain) -> float:
    goals = chain.goals
    return float(np.max(np.asarray(d_fn(goals[:-1], goals[1:]))))


def generate_subgoals(o_cur, o_G, sample_fn, encode_fn, d_fn,
                      hierarchy: Hierarchy, horizon: float, rng_seed,
                      redistribute: bool = True, adaptive: bool = True,
                      conditioned: bool = True) -> SubgoalChain:
    """Deepen the chain level by level until it is trackable.

    Stops as soon as the largest adjacent travel-time estimate drops below
    the horizon; always stops at the hierarchy cap. `adaptive=False` skips
    the reachability stop (always refine to the cap); `conditioned=False`
    samples each level without previous-level conditioning.
    """
    rng = ensure_rng(rng_seed)
    o_cur = np.asarray(o_cur, dtype=np.float64)
    o_G = np.asarray(o_G, dtype=np.float64)
    chain = SubgoalChain(goals=np.stack([o_cur, o_G]), level=0)
    for next_level in range(1, len(hierarchy) + 1):
        if adaptive and max_segment_estimate(d_fn, chain) < horizon:
            return chain
        if next_level >= len(hierarchy):
            return chain
        m_next = hierarchy[next_level]
        if conditioned:
            latent_chain = encode_latents(encode_fn, chain)
            cond = redistribute_upsample(latent_chain, d_fn, m_next, redistribute=redistribute)
        else:
            cond = None
        goals = np.asarray(sample_fn(o_cur, o_G, cond, m_next, rng), dtype=np.float64)
        chain = SubgoalChain(goals=goals, level=next_level)
    return chain


def prune_reached(chain: SubgoalChain, o_now, eps_reach: float) -> SubgoalChain:
    """Drop passed subgoals: everything up to the farthest-along entry
    within eps_reach of the current state; the final goal always stays."""
    o_now = np.asarray(o_now, dtype=np.float64)
    goals = chain.goals
    m = goals.shape[0]
    if m <= 1:
        return chain
    dists = np.linalg.norm((goals[:-1] - o_now[None]).reshape(m - 1, -1), axis=1)
    hit = np.flatnonzero(dists <= eps_reach)
    if hit.size == 0:
        return chain
    cut = int(hit.max()) + 1
    return SubgoalChain(goals=goals[cut:].copy(), level=chain.level)


def should_regenerate(step_counter: int) -> bool:
    """Regeneration cadence: every 10 steps, including step 0."""
    return step_counter % REGEN_PERIOD == 0
