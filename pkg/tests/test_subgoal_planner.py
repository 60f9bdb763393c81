"""Hierarchy recursion, redistribution upsampling, and chain pruning."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subgoal_mpc import subgoal_planner as sp
from subgoal_mpc.diffusion import SubgoalChain


HIER = sp.Hierarchy()


def identity_encode(flat_states):
    return flat_states


def euclid_d(a, b):
    return np.linalg.norm((a - b).reshape(a.shape[0], -1), axis=1)


def line_sampler(o_cur, o_G, cond, m, rng):
    t = np.linspace(0.0, 1.0, m).reshape(m, 1, 1)
    return o_cur[None] * (1 - t) + o_G[None] * t


def chain_of(points):
    return SubgoalChain(goals=np.asarray(points, dtype=float)[:, None, :], level=1)


# -- encode_latents ------------------------------------------------------------


def test_encode_latents_shape_and_identity():
    chain = chain_of([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    lc = sp.encode_latents(identity_encode, chain)
    assert lc.latents.shape == (3, 2)
    np.testing.assert_array_equal(lc.latents, chain.goals.reshape(3, 2))


def test_encode_latents_same_subgoal_same_latent():
    chain = chain_of([[0.2, 0.2], [0.2, 0.2], [0.9, 0.1]])
    lc = sp.encode_latents(lambda s: s * 2.0 + 1.0, chain)
    np.testing.assert_array_equal(lc.latents[0], lc.latents[1])


def test_encode_latents_lipschitz_probe():
    def enc(flat):
        return np.tanh(flat @ np.array([[1.0, 0.3], [-0.2, 0.8]]))

    pts = [[0.0, 0.0], [0.4, 0.1], [0.8, 0.3]]
    base = sp.encode_latents(enc, chain_of(pts)).latents
    bumped = [[0.0, 0.0], [0.4, 0.1 + 1e-4], [0.8, 0.3]]
    pert = sp.encode_latents(enc, chain_of(bumped)).latents
    delta = np.abs(pert - base)
    assert np.all(delta[[0, 2]] == 0.0)
    assert 0 < delta[1].max() < 1e-3


# -- redistribute_upsample --------------------------------------------------------


def equal_spacing_oracle(latents, m_target):
    """Independent implementation: plain linear interpolation on indices."""
    m = latents.shape[0]
    out = np.empty((m_target, latents.shape[1]))
    for t in range(m_target):
        x = t * (m - 1) / (m_target - 1)
        i = min(int(np.floor(x)), m - 2)
        f = x - i
        out[t] = latents[i] * (1 - f) + latents[i + 1] * f
    return out


def arc_length_oracle(latents, seg_lengths, m_target):
    """Brute-force arc-length interpolation over explicit segment scan."""
    pos = np.concatenate([[0.0], np.cumsum(seg_lengths) / np.sum(seg_lengths)])
    out = np.empty((m_target, latents.shape[1]))
    for t in range(m_target):
        q = t / (m_target - 1)
        i = 0
        while i < len(seg_lengths) - 1 and q > pos[i + 1]:
            i += 1
        f = (q - pos[i]) / (pos[i + 1] - pos[i])
        out[t] = latents[i] * (1 - f) + latents[i + 1] * f
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(0, 14))
def test_uniform_redistribution_equals_equal_spacing(seed, m_src, extra):
    rng = np.random.default_rng(seed)
    m_target = m_src + extra
    pts = rng.uniform(-1, 1, (m_src, 1, 2))
    lc = sp.LatentChain(latents=rng.normal(size=(m_src, 5)),
                        source=SubgoalChain(goals=pts))
    got = sp.redistribute_upsample(lc, euclid_d, m_target, redistribute=False)
    want = equal_spacing_oracle(lc.latents, m_target)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_identity_when_target_equals_source():
    rng = np.random.default_rng(0)
    lc = sp.LatentChain(latents=rng.normal(size=(5, 3)),
                        source=SubgoalChain(goals=rng.uniform(-1, 1, (5, 1, 2))))
    got = sp.redistribute_upsample(lc, euclid_d, 5, redistribute=False)
    np.testing.assert_allclose(got, lc.latents, atol=1e-12)


def test_redistribution_arc_positions_spec_case():
    # 3 subgoals with travel times [1, 3]: cumulative positions [0, .25, 1]
    latents = np.array([[0.0], [1.0], [2.0]])
    pts = np.array([[[0.0, 0.0]], [[0.1, 0.0]], [[0.4, 0.0]]])
    lc = sp.LatentChain(latents=latents, source=SubgoalChain(goals=pts))

    def d_fn(a, b):
        return np.array([1.0, 3.0])

    got = sp.redistribute_upsample(lc, d_fn, 5, redistribute=True)
    # queries 0, .25, .5, .75, 1 against knots [0, .25, 1]
    want = np.array([[0.0], [1.0], [1.0 + 1.0 / 3.0], [1.0 + 2.0 / 3.0], [2.0]])
    np.testing.assert_allclose(got, want, atol=1e-9)
    # three of the five queries land in the second (longer) segment
    assert np.sum(got[:, 0] >= 1.0) >= 3


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_redistribution_matches_brute_force_oracle(seed):
    rng = np.random.default_rng(seed)
    m_src = int(rng.integers(2, 7))
    m_target = m_src + int(rng.integers(0, 12))
    latents = rng.normal(size=(m_src, 4))
    segs = rng.uniform(0.2, 5.0, m_src - 1)
    lc = sp.LatentChain(latents=latents,
                        source=SubgoalChain(goals=rng.uniform(-1, 1, (m_src, 1, 2))))
    got = sp.redistribute_upsample(lc, lambda a, b: segs, m_target, redistribute=True)
    want = arc_length_oracle(latents, segs, m_target)
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_upsample_rejects_downsampling():
    lc = sp.LatentChain(latents=np.zeros((5, 2)),
                        source=SubgoalChain(goals=np.zeros((5, 1, 2))))
    with pytest.raises(ValueError):
        sp.redistribute_upsample(lc, euclid_d, 3)


# -- generate_subgoals -------------------------------------------------------------


def test_generate_stops_immediately_when_reachable():
    always_near = lambda a, b: np.zeros(a.shape[0])
    chain = sp.generate_subgoals(np.zeros((1, 2)), np.ones((1, 2)), line_sampler,
                                 identity_encode, always_near, HIER, horizon=10, rng_seed=0)
    assert len(chain) == 2
    assert chain.level == 0


def test_generate_hits_cap_when_never_reachable():
    always_far = lambda a, b: np.full(a.shape[0], 1e9)
    chain = sp.generate_subgoals(np.zeros((1, 2)), np.ones((1, 2)), line_sampler,
                                 identity_encode, always_far, HIER, horizon=10, rng_seed=0)
    assert len(chain) == 17


def test_generate_geometric_stub_selects_first_clearing_level():
    rng = np.random.default_rng(0)
    threshold = 0.3
    d_fn = lambda a, b: np.where(euclid_d(a, b) < threshold, 1.0, 100.0)
    for _ in range(50):
        cur = rng.uniform(-1, 1, (1, 2))
        goal = rng.uniform(-1, 1, (1, 2))
        chain = sp.generate_subgoals(cur, goal, line_sampler, identity_encode,
                                     d_fn, HIER, horizon=10, rng_seed=rng)
        dist = np.linalg.norm(cur - goal)
        # the line sampler splits the segment evenly: level m has segments dist/(m-1)
        expected = next((m for m in HIER.levels if dist / (m - 1) < threshold), 17)
        assert len(chain) == expected
        np.testing.assert_array_equal(chain.goals[0], cur)
        np.testing.assert_array_equal(chain.goals[-1], goal)


def test_generate_adaptive_off_forces_cap():
    always_near = lambda a, b: np.zeros(a.shape[0])
    chain = sp.generate_subgoals(np.zeros((1, 2)), np.ones((1, 2)), line_sampler,
                                 identity_encode, always_near, HIER, horizon=10,
                                 rng_seed=0, adaptive=False)
    assert len(chain) == 17


def test_generate_unconditioned_passes_none():
    seen = []

    def probe_sampler(cur, goal, cond, m, rng):
        seen.append(cond)
        return line_sampler(cur, goal, cond, m, rng)

    always_far = lambda a, b: np.full(a.shape[0], 1e9)
    sp.generate_subgoals(np.zeros((1, 2)), np.ones((1, 2)), probe_sampler,
                         identity_encode, always_far, HIER, horizon=10,
                         rng_seed=0, conditioned=False)
    assert seen and all(c is None for c in seen)


def test_generate_chain_sizes_follow_hierarchy():
    rng = np.random.default_rng(3)
    d_fn = lambda a, b: np.where(euclid_d(a, b) < 0.2, 1.0, 100.0)
    for _ in range(20):
        cur, goal = rng.uniform(-1, 1, (2, 1, 2))
        chain = sp.generate_subgoals(cur, goal, line_sampler, identity_encode,
                                     d_fn, HIER, horizon=10, rng_seed=rng)
        assert len(chain) in HIER.levels


# -- prune_reached -------------------------------------------------------------------


def test_prune_exact_hit_removes_first():
    chain = chain_of([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    out = sp.prune_reached(chain, np.array([[0.0, 0.0]]), eps_reach=0.05)
    assert len(out) == 2
    np.testing.assert_array_equal(out.goals[-1], chain.goals[-1])


def test_prune_far_keeps_chain():
    chain = chain_of([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    out = sp.prune_reached(chain, np.array([[0.25, 0.25]]), eps_reach=0.05)
    assert len(out) == 3


def test_prune_monotone_progress_drops_predecessors():
    pts = [[0.0, 0.0], [0.3, 0.0], [0.6, 0.0], [0.9, 0.0], [1.2, 0.0]]
    chain = chain_of(pts)
    out = sp.prune_reached(chain, np.array([[0.6, 0.01]]), eps_reach=0.05)
    # g_2 reached: g_0, g_1, g_2 all go
    assert len(out) == 2
    np.testing.assert_array_equal(out.goals[0], chain.goals[3])


def test_prune_never_drops_final_goal():
    chain = chain_of([[0.0, 0.0], [1.0, 1.0]])
    out = sp.prune_reached(chain, np.array([[1.0, 1.0]]), eps_reach=10.0)
    assert len(out) == 1
    np.testing.assert_array_equal(out.goals[0], chain.goals[-1])
    again = sp.prune_reached(out, np.array([[1.0, 1.0]]), eps_reach=10.0)
    assert len(again) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_prune_never_lengthens(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 9))
    chain = SubgoalChain(goals=rng.uniform(-1, 1, (m, 2, 2)))
    out = sp.prune_reached(chain, rng.uniform(-1, 1, (2, 2)), eps_reach=0.3)
    assert 1 <= len(out) <= m
    np.testing.assert_array_equal(out.goals[-1], chain.goals[-1])


# -- should_regenerate ---------------------------------------------------------------


def test_regeneration_cadence():
    assert sp.should_regenerate(0) is True
    assert sp.should_regenerate(7) is False
    fired = [t for t in range(31) if sp.should_regenerate(t)]
    assert fired == [0, 10, 20, 30]


def test_hierarchy_validation():
    with pytest.raises(ValueError):
        sp.Hierarchy(levels=(3, 5))
    with pytest.raises(ValueError):
        sp.Hierarchy(levels=(2, 2, 5))
