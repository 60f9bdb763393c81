"""Dataset collection, persistence, and batch-sampling contracts."""

import numpy as np
import pytest

from subgoal_mpc import datastore as ds
from subgoal_mpc import world2d as w


HIERARCHY = [2, 3, 5, 7, 9, 17]


@pytest.fixture(scope="module")
def small_chain_dataset():
    env = w.default_env("chain", scene="empty", K=5)
    return ds.collect_dataset(env, n_traj=4, traj_len=30, rng_seed=0), env


def test_collect_shapes(small_chain_dataset):
    dataset, env = small_chain_dataset
    assert len(dataset) == 4
    for traj in dataset.trajectories:
        assert traj.states.shape == (30, 5, 2)
        assert traj.controls.shape == (29, 2)


def test_collect_replay_oracle(small_chain_dataset):
    dataset, env = small_chain_dataset
    assert ds.verify_replay(dataset, env) <= 1e-6


def test_collect_deterministic_and_chunk_independent():
    env = w.default_env("point_mass", scene="two_disks")
    a = ds.collect_dataset(env, n_traj=3, traj_len=12, rng_seed=7, chunk=3)
    b = ds.collect_dataset(env, n_traj=3, traj_len=12, rng_seed=7, chunk=1)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert np.array_equal(ta.states, tb.states)
        assert np.array_equal(ta.controls, tb.controls)


def test_collect_propagates_no_free_space():
    grid = w.SdfGrid(origin=np.array([-1.0, -1.0]), cell_size=0.25,
                     values=np.full((9, 9), -1.0))
    env = w.EnvConfig(kind="point_mass", K=1, link_length=1.0, u_max=0.05, sdf=grid)
    with pytest.raises(w.NoFreeSpaceError):
        ds.collect_dataset(env, n_traj=1, traj_len=5, rng_seed=0)


def test_jsonl_round_trip(tmp_path, small_chain_dataset):
    dataset, env = small_chain_dataset
    path = tmp_path / "data.jsonl"
    ds.write_dataset(path, dataset)
    back = ds.load_dataset(path)
    assert back.header["format"] == "subgoal-mpc/v1"
    assert back.header["K"] == 5
    assert back.header["normalization"] == {"lo": [-1, -1], "hi": [1, 1]}
    assert len(back) == len(dataset)
    for ta, tb in zip(dataset.trajectories, back.trajectories):
        assert np.array_equal(ta.states, tb.states)
        assert np.array_equal(ta.controls, tb.controls)
        assert ta.env_id == tb.env_id


def test_states_stay_normalized(small_chain_dataset):
    dataset, env = small_chain_dataset
    for traj in dataset.trajectories:
        assert np.all(np.abs(traj.states) <= 1.0)


# -- subgoal batches ---------------------------------------------------------


def test_subsample_indices_equal_spacing():
    np.testing.assert_array_equal(ds.subsample_indices(0, 8, 3), [0, 4, 8])


def test_subsample_indices_endpoints_only():
    np.testing.assert_array_equal(ds.subsample_indices(3, 11, 2), [3, 11])


def test_subsample_indices_monotone_with_endpoints():
    rng = np.random.default_rng(0)
    for _ in range(200):
        t0 = int(rng.integers(0, 50))
        m = int(rng.integers(2, 18))
        t1 = t0 + int(rng.integers(m - 1, 80))
        idx = ds.subsample_indices(t0, t1, m)
        assert idx[0] == t0 and idx[-1] == t1
        assert np.all(np.diff(idx) >= 1)


def test_subgoal_batch_structure(small_chain_dataset):
    dataset, env = small_chain_dataset
    batch = ds.sample_subgoal_batch(dataset, HIERARCHY, 32, sigma_cond=0.03, rng_seed=1)
    assert len(batch) == 32
    for item in batch:
        m_l, m_prev = HIERARCHY[item.level], HIERARCHY[item.level - 1]
        assert item.targets.shape == (m_l, 5, 2)
        assert item.conditioning.shape == (m_prev, 5, 2)
        np.testing.assert_array_equal(item.targets[0], item.current)
        np.testing.assert_array_equal(item.targets[-1], item.goal)
        assert 1 <= item.level < len(HIERARCHY)


def test_subgoal_batch_zero_noise_matches_subsample(small_chain_dataset):
    dataset, env = small_chain_dataset
    batch = ds.sample_subgoal_batch(dataset, HIERARCHY, 16, sigma_cond=0.0, rng_seed=2)
    for item in batch:
        if item.level == 1:
            np.testing.assert_array_equal(item.conditioning[0], item.current)
            np.testing.assert_array_equal(item.conditioning[-1], item.goal)
        # conditioning states must be actual dataset states (no noise added)
        found = False
        for traj in dataset.trajectories:
            diff = np.abs(traj.states[:, None] - item.conditioning[None]).max(axis=(2, 3))
            if np.all(diff.min(axis=0) == 0.0):
                found = True
                break
        assert found


def test_subgoal_batch_deterministic(small_chain_dataset):
    dataset, env = small_chain_dataset
    a = ds.sample_subgoal_batch(dataset, HIERARCHY, 8, sigma_cond=0.03, rng_seed=3)
    b = ds.sample_subgoal_batch(dataset, HIERARCHY, 8, sigma_cond=0.03, rng_seed=3)
    for ia, ib in zip(a, b):
        assert np.array_equal(ia.targets, ib.targets)
        assert np.array_equal(ia.conditioning, ib.conditioning)
        assert ia.level == ib.level


def test_subgoal_batch_rejects_bad_hierarchy(small_chain_dataset):
    dataset, env = small_chain_dataset
    with pytest.raises(ValueError):
        ds.sample_subgoal_batch(dataset, [3, 5], 4, 0.0, 0)
    with pytest.raises(ValueError):
        ds.sample_subgoal_batch(dataset, [2, 5, 5], 4, 0.0, 0)


# -- distance pairs ------------------------------------------------------------


def test_distance_pair_gap_definition(small_chain_dataset):
    dataset, env = small_chain_dataset
    pairs = ds.sample_distance_pairs(dataset, 64, rng_seed=0)
    for p in pairs:
        assert 1 <= p.k <= 40
        # o_a and o_b must sit exactly k (or k+clip) indices apart in a source
        matched = False
        for traj in dataset.trajectories:
            hits_a = np.where(np.all(traj.states == p.o_a, axis=(1, 2)))[0]
            hits_b = np.where(np.all(traj.states == p.o_b, axis=(1, 2)))[0]
            for ia in hits_a:
                for ib in hits_b:
                    gap = ib - ia
                    if gap >= 1 and min(gap, 40) == p.k:
                        matched = True
        assert matched


def test_distance_pair_clips_to_last_bin():
    # long synthetic trajectory guarantees gaps over 40 appear
    ds_line = ds.make_line_dataset(n_traj=2, traj_len=90, rng_seed=0)
    pairs = ds.sample_distance_pairs(ds_line, 400, rng_seed=1)
    ks = np.array([p.k for p in pairs])
    assert ks.max() == 40
    assert ks.min() >= 1


def test_distance_pairs_never_same_index():
    ds_line = ds.make_line_dataset(n_traj=1, traj_len=10, rng_seed=0)
    pairs = ds.sample_distance_pairs(ds_line, 100, rng_seed=2)
    for p in pairs:
        assert not np.array_equal(p.o_a, p.o_b)


def test_line_dataset_is_straight():
    d = ds.make_line_dataset(n_traj=5, traj_len=12, rng_seed=3)
    for traj in d.trajectories:
        pts = traj.states[:, 0, :]
        a, b = pts[0], pts[-1]
        t = np.linspace(0, 1, 12)[:, None]
        np.testing.assert_allclose(pts, a + t * (b - a), atol=1e-12)
