"""Demonstration pipeline: persistence, splits, stacking, noisy sampling."""

import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mailbench.arena import ArenaEnv, EnvConfig, scripted_expert
from mailbench.expert_data import (
    DemoChecksumError, DemoDataset, DemoTruncatedError, DemoVersionError,
    FEATURE_NOISE_STD, OBS_NOISE_STD, _decode_frame, _encode_frame,
    concat_datasets, heldout_action_accuracy, load, record_scripted,
    sample_expert_batch, save)
from mailbench.stacking import FrameStacker, STACK_DEPTH

SMALL = EnvConfig(horizon=40)


@pytest.fixture(scope="module")
def ds():
    return record_scripted(3, seed=50, env_cfg=SMALL)


# -- recording --------------------------------------------------------------

def test_record_scripted_is_deterministic(ds):
    again = record_scripted(3, seed=50, env_cfg=SMALL)
    np.testing.assert_array_equal(ds.frames, again.frames)
    np.testing.assert_array_equal(ds.masks, again.masks)
    np.testing.assert_array_equal(ds.features, again.features)
    assert ds.scores == again.scores


def test_record_scripted_stores_prestep_observations(ds):
    # replaying the stored masks from each episode seed must reproduce the
    # stored rewards: the frame belongs to the state the mask acted on
    env = ArenaEnv(SMALL)
    for e in range(ds.n_episodes):
        lo = ds.episode_starts[e]
        hi = ds.episode_starts[e + 1] if e + 1 < ds.n_episodes else len(ds)
        _, frame = env.reset(50 + e)
        for i in range(lo, hi):
            np.testing.assert_array_equal(ds.frames[i], frame.flat)
            _, frame, reward, done = env.step(ds.masks[i])
            assert reward == ds.rewards[i]
            assert done == bool(ds.terminals[i])
        assert done


def test_record_rejects_zero_episodes():
    with pytest.raises(ValueError):
        record_scripted(0, seed=1, env_cfg=SMALL)


# -- persistence ------------------------------------------------------------

def test_save_load_round_trip(tmp_path, ds):
    path = tmp_path / "demos.jsonl"
    save(ds, path)
    back = load(path)
    np.testing.assert_array_equal(back.frames, ds.frames)
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.masks, ds.masks)
    np.testing.assert_array_equal(back.rewards, ds.rewards)
    np.testing.assert_array_equal(back.terminals, ds.terminals)
    np.testing.assert_array_equal(back.episode_ids, ds.episode_ids)
    assert back.scores == ds.scores
    assert back.source == ds.source
    assert back.seed == ds.seed
    assert back.obs_shape == ds.obs_shape
    # json represents tuples as lists; compare in normalized form
    assert back.env_config == json.loads(json.dumps(ds.env_config))


def test_save_is_stable_across_round_trips(tmp_path, ds):
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    save(ds, p1)
    save(load(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_wrong_kind(tmp_path, ds):
    path = tmp_path / "demos.jsonl"
    save(ds, path)
    text = path.read_text().replace('"kind": "demo"', '"kind": "nope"', 1)
    path.write_text(text)
    with pytest.raises(DemoVersionError):
        load(path)


def test_load_rejects_future_version(tmp_path, ds):
    path = tmp_path / "demos.jsonl"
    save(ds, path)
    text = path.read_text().replace('"version": 1', '"version": 99', 1)
    path.write_text(text)
    with pytest.raises(DemoVersionError, match="99"):
        load(path)


def test_load_rejects_missing_trailer(tmp_path, ds):
    path = tmp_path / "demos.jsonl"
    save(ds, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")  # trailer gone
    with pytest.raises(DemoTruncatedError):
        load(path)


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(DemoTruncatedError):
        load(path)


def test_load_detects_tampered_record(tmp_path, ds):
    path = tmp_path / "demos.jsonl"
    save(ds, path)
    lines = path.read_text().splitlines()
    # flip one mask bit in a step record; still valid JSON, wrong digest
    for i, line in enumerate(lines):
        if '"m"' in line:
            rec = json.loads(line)
            rec["m"] = ("1" if rec["m"][0] == "0" else "0") + rec["m"][1:]
            lines[i] = json.dumps(rec)
            break
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DemoChecksumError):
        load(path)


def _write_custom(path, body_lines, steps, episodes):
    body = "\n".join(body_lines) + "\n"
    digest = hashlib.sha256(body.encode()).hexdigest()
    trailer = json.dumps({"end": True, "steps": steps, "episodes": episodes,
                          "scores": [], "sha256": digest})
    path.write_text(body + trailer + "\n")


def _header(cfg):
    return json.dumps({"kind": "demo", "version": 1,
                       "n_actions": cfg.n_actions,
                       "obs_shape": list(cfg.obs_shape), "feature_dim": 2,
                       "source": "scripted", "seed": 0, "env": {}})


def _step_line(cfg):
    bits = np.zeros(int(np.prod(cfg.obs_shape)), dtype=np.uint8)
    return json.dumps({"o": _encode_frame(bits), "f": [1.0, 0.5],
                       "m": "0" * cfg.n_actions, "r": 0.0, "t": 0})


def test_load_rejects_step_before_episode_marker(tmp_path):
    path = tmp_path / "demos.jsonl"
    _write_custom(path, [_header(SMALL), _step_line(SMALL)], steps=1, episodes=0)
    with pytest.raises(DemoTruncatedError, match="before any episode"):
        load(path)


def test_load_rejects_count_mismatch(tmp_path):
    path = tmp_path / "demos.jsonl"
    _write_custom(path, [_header(SMALL), json.dumps({"ep": 0}),
                         _step_line(SMALL)], steps=7, episodes=1)
    with pytest.raises(DemoTruncatedError, match="count mismatch"):
        load(path)


def test_corrupt_record_reports_byte_offset(tmp_path, ds):
    path = tmp_path / "demos.jsonl"
    save(ds, path)
    lines = path.read_text().splitlines()
    target = 2  # first step record (header, ep marker, then steps)
    expected_offset = sum(len(l.encode()) + 1 for l in lines[:target])
    mangled = lines[target][:10]  # cut mid-JSON
    # keep the digest valid so the parse error is what surfaces
    body_lines = lines[:target] + [mangled] + lines[target + 1:-1]
    _write_custom(path, body_lines, steps=len(ds), episodes=ds.n_episodes)
    with pytest.raises(DemoTruncatedError) as err:
        load(path)
    assert err.value.byte_offset == expected_offset


@settings(max_examples=25, deadline=None)
@given(bits=st.lists(st.integers(0, 1), min_size=1, max_size=300))
def test_frame_codec_round_trip(bits):
    arr = np.array(bits, dtype=np.uint8)
    np.testing.assert_array_equal(_decode_frame(_encode_frame(arr), len(arr)), arr)


# -- held-out split ---------------------------------------------------------

def test_heldout_every_tenth_episode():
    ids = np.repeat(np.arange(30), 4)
    n = len(ids)
    shape = (1, 1, 1)
    d = DemoDataset(frames=np.zeros((n, 1), dtype=np.uint8),
                    features=np.zeros((n, 2)), masks=np.zeros((n, 7), dtype=np.uint8),
                    rewards=np.zeros(n), terminals=np.zeros(n, dtype=bool),
                    episode_ids=ids, scores=[0.0] * 30, source="scripted",
                    seed=0, env_config={}, obs_shape=shape)
    assert d.heldout_episodes == [9, 19, 29]
    held = set(d.heldout_indices.tolist())
    train = set(d.train_indices.tolist())
    assert held.isdisjoint(train)
    assert held | train == set(range(n))
    assert all(ids[i] in (9, 19, 29) for i in held)


def test_heldout_fallback_for_tiny_datasets():
    def make(n_eps):
        ids = np.repeat(np.arange(n_eps), 3)
        n = len(ids)
        return DemoDataset(frames=np.zeros((n, 1), dtype=np.uint8),
                           features=np.zeros((n, 2)),
                           masks=np.zeros((n, 7), dtype=np.uint8),
                           rewards=np.zeros(n), terminals=np.zeros(n, dtype=bool),
                           episode_ids=ids, scores=[0.0] * n_eps,
                           source="scripted", seed=0, env_config={},
                           obs_shape=(1, 1, 1))
    assert make(1).heldout_episodes == []
    assert make(2).heldout_episodes == [1]  # last episode when none qualify


# -- frame stacking ---------------------------------------------------------

def test_stacked_obs_matches_live_stacker(ds):
    stacker = FrameStacker()
    env = ArenaEnv(SMALL)
    for e in range(ds.n_episodes):
        lo = ds.episode_starts[e]
        hi = ds.episode_starts[e + 1] if e + 1 < ds.n_episodes else len(ds)
        _, frame = env.reset(50 + e)
        stacked = stacker.reset(frame.flat)
        for i in range(lo, hi):
            np.testing.assert_array_equal(ds.stacked_obs([i])[0], stacked)
            _, frame, _, _ = env.step(ds.masks[i])
            stacked = stacker.push(frame.flat)


def test_stacked_obs_clamps_at_episode_start(ds):
    first = ds.stacked_obs([0])[0]
    frame = ds.frames[0].astype(np.float64)
    per = frame.shape[0]
    for k in range(STACK_DEPTH):
        np.testing.assert_array_equal(first[k * per:(k + 1) * per], frame)
    # fourth step of an episode mixes four distinct frames
    i = int(ds.episode_starts[1]) + STACK_DEPTH - 1
    stacked = ds.stacked_obs([i])[0]
    for k in range(STACK_DEPTH):
        np.testing.assert_array_equal(
            stacked[k * per:(k + 1) * per],
            ds.frames[i - (STACK_DEPTH - 1 - k)].astype(np.float64))


def test_stack_depth_is_four():
    assert STACK_DEPTH == 4


# -- noisy batch sampling ---------------------------------------------------

def test_sample_batch_shapes_and_noise_free_content(ds):
    rng = np.random.default_rng(0)
    obs, feats, masks = sample_expert_batch(ds, 16, rng, obs_std=0.0, feat_std=0.0)
    assert obs.shape == (16, STACK_DEPTH * ds.frames.shape[1])
    assert feats.shape == (16, ds.feature_dim)
    assert masks.shape == (16, ds.n_actions)
    assert set(np.unique(obs)) <= {0.0, 1.0}  # clean draws stay binary


def test_sample_batch_honors_stack_depth(ds):
    rng = np.random.default_rng(0)
    obs, _, _ = sample_expert_batch(ds, 4, rng, obs_std=0.0, feat_std=0.0,
                                    depth=1)
    assert obs.shape == (4, ds.frames.shape[1])


def test_sample_batch_draws_only_from_training_split(ds):
    # mirror the generator stream to recover which rows were drawn
    obs, feats, masks = sample_expert_batch(
        ds, 24, np.random.default_rng(1), obs_std=0.0, feat_std=0.0)
    shadow = np.random.default_rng(1)
    picks = ds.train_indices[shadow.integers(0, len(ds.train_indices), size=24)]
    np.testing.assert_array_equal(masks, ds.masks[picks])
    np.testing.assert_array_equal(feats, ds.features[picks])
    assert set(picks.tolist()) <= set(ds.train_indices.tolist())


def test_sample_batch_noise_statistics(ds):
    rng = np.random.default_rng(2)
    clean_obs, clean_feats, _ = sample_expert_batch(
        ds, 64, np.random.default_rng(2), obs_std=0.0, feat_std=0.0)
    noisy_obs, noisy_feats, noisy_masks = sample_expert_batch(
        ds, 64, rng, obs_std=OBS_NOISE_STD, feat_std=FEATURE_NOISE_STD)
    # same generator state at call time -> same picks -> same underlying rows
    d_obs = (noisy_obs - clean_obs).ravel()
    d_feat = (noisy_feats - clean_feats).ravel()
    assert abs(d_obs.mean()) < 0.01
    assert d_obs.std() == pytest.approx(OBS_NOISE_STD, rel=0.1)
    assert abs(d_feat.mean()) < 0.1
    assert d_feat.std() == pytest.approx(FEATURE_NOISE_STD, rel=0.2)
    assert set(np.unique(noisy_masks)) <= {0, 1}  # masks stay exact


def test_sample_batch_never_mutates_stored_data(ds):
    before = ds.frames.copy(), ds.features.copy(), ds.masks.copy()
    rng = np.random.default_rng(3)
    sample_expert_batch(ds, 32, rng)
    np.testing.assert_array_equal(ds.frames, before[0])
    np.testing.assert_array_equal(ds.features, before[1])
    np.testing.assert_array_equal(ds.masks, before[2])


def test_sample_batch_validates_size(ds):
    rng = np.random.default_rng(4)
    with pytest.raises(ValueError):
        sample_expert_batch(ds, len(ds.train_indices) + 1, rng)


def test_sampling_covers_training_split_uniformly(ds):
    rng = np.random.default_rng(5)
    counts = np.zeros(len(ds), dtype=np.int64)
    draws = 200
    size = min(32, len(ds.train_indices))
    for _ in range(draws):
        picks = ds.train_indices[rng.integers(0, len(ds.train_indices), size=size)]
        np.add.at(counts, picks, 1)
    assert counts[ds.heldout_indices].sum() == 0
    train_counts = counts[ds.train_indices]
    expected = draws * size / len(ds.train_indices)
    # loose two-sided band; uniform sampling concentrates near expected
    assert train_counts.mean() == pytest.approx(expected, rel=0.01)
    assert train_counts.max() < expected * 3


# -- held-out accuracy ------------------------------------------------------

def test_heldout_accuracy_oracle_policy(ds):
    obs, feats, masks = ds.heldout_batch()

    def exact(o, f):
        assert o.shape[0] == masks.shape[0]
        return masks.astype(np.float64)

    assert heldout_action_accuracy(ds, exact) == 1.0


def test_heldout_accuracy_zero_policy(ds):
    obs, feats, masks = ds.heldout_batch()
    zero_frac = float(np.mean(np.all(masks == 0, axis=1)))

    def never(o, f):
        return np.zeros((o.shape[0], ds.n_actions))

    assert heldout_action_accuracy(ds, never) == pytest.approx(zero_frac)


def test_heldout_accuracy_drops_noop_column(ds):
    obs, feats, masks = ds.heldout_batch()

    def single_head(o, f):
        out = np.zeros((o.shape[0], ds.n_actions + 1))
        out[:, :ds.n_actions] = masks
        return out

    assert heldout_action_accuracy(ds, single_head) == 1.0


# -- concatenation ----------------------------------------------------------

def test_concat_renumbers_episodes(ds):
    other = record_scripted(2, seed=60, env_cfg=SMALL)
    merged = concat_datasets([ds, other])
    assert merged.n_episodes == ds.n_episodes + 2
    assert len(merged) == len(ds) + len(other)
    np.testing.assert_array_equal(
        merged.episode_ids[len(ds):], other.episode_ids + ds.n_episodes)
    assert merged.scores == ds.scores + other.scores
    assert merged.source == "scripted"


def test_concat_rejects_incompatible_shapes(ds):
    bad = DemoDataset(frames=np.zeros((2, 1), dtype=np.uint8),
                      features=np.zeros((2, 2)),
                      masks=np.zeros((2, 3), dtype=np.uint8),
                      rewards=np.zeros(2), terminals=np.zeros(2, dtype=bool),
                      episode_ids=np.array([0, 0]), scores=[0.0],
                      source="human", seed=None, env_config={},
                      obs_shape=(1, 1, 1))
    with pytest.raises(ValueError):
        concat_datasets([ds, bad])
    with pytest.raises(ValueError):
        concat_datasets([])
