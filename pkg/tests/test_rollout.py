import json

import numpy as np
import pytest
from scipy import stats

from metamaze import rollout
from metamaze.maze import core


def small_config(episode_len=64):
    return core.MazeConfig(size=9, num_pnts=3, reach_reward=1.0,
                           episode_len=episode_len)


def quick_record(seed=0, episode_len=32, render=True, **rollout_kwargs):
    task = core.generate_task(small_config(episode_len), seed)
    cfg = rollout.RolloutConfig(episode_len=episode_len, **rollout_kwargs)
    return rollout.collect_episode(task, cfg, seed=seed + 100, render=render)


class TestRolloutConfig:
    def test_defaults(self):
        cfg = rollout.RolloutConfig()
        assert cfg.behavior_p_range == (0.0, 0.5)
        assert cfg.epsilon_range == (0.0, 0.8)
        assert cfg.reference_p == 1.0

    def test_bad_ranges_rejected(self):
        with pytest.raises(ValueError):
            rollout.RolloutConfig(behavior_p_range=(0.6, 0.4))
        with pytest.raises(ValueError):
            rollout.RolloutConfig(epsilon_range=(-0.1, 0.5))


class TestCollectEpisode:
    def test_shapes(self):
        rec = quick_record(episode_len=32)
        assert rec.frames.shape == (32, 128, 128, 3)
        for arr in (rec.behavior_actions, rec.reference_actions,
                    rec.rewards, rec.commands):
            assert arr.shape == (32,)
        assert rec.rewards.dtype == np.float32

    def test_meta_fields_in_range(self):
        rec = quick_record()
        assert 0.0 <= rec.meta["behavior_p"] <= 0.5
        assert 0.0 <= rec.meta["epsilon"] <= 0.8
        assert rec.meta["version"] == rollout.PACK_VERSION

    def test_deterministic(self):
        a = quick_record(seed=5)
        b = quick_record(seed=5)
        assert np.array_equal(a.frames, b.frames)
        assert np.array_equal(a.behavior_actions, b.behavior_actions)
        assert np.array_equal(a.reference_actions, b.reference_actions)
        assert a.meta == b.meta

    def test_no_render_skips_frames(self):
        rec = quick_record(render=False)
        assert rec.frames.size == 0

    def test_epsilon_one_behavior_is_pure_noise(self):
        # With epsilon pinned to 1, executed actions ignore the planner and
        # hit all five values on a long episode.
        rec = quick_record(episode_len=512, epsilon_range=(1.0, 1.0))
        counts = np.bincount(rec.behavior_actions, minlength=5)
        assert (counts > 0).all()

    def test_epsilon_zero_behavior_matches_planner(self):
        # With epsilon 0 and behavior p forced to 1, the executed stream is
        # a pure privileged policy (though seeded separately from labels).
        rec = quick_record(episode_len=128, epsilon_range=(0.0, 0.0),
                           behavior_p_range=(1.0, 1.0))
        # planner never emits STOP
        assert (rec.behavior_actions != int(core.Action.STOP)).all()

    def test_reference_labels_never_stop(self):
        rec = quick_record(episode_len=128)
        assert (rec.reference_actions != int(core.Action.STOP)).all()

    def test_rewards_match_replayed_env(self):
        rec = quick_record(seed=3, episode_len=64)
        task = core.task_from_manifest(rec.manifest)
        state = core.initial_state(task)
        for t, a in enumerate(rec.behavior_actions):
            state, rew, _ = core.step(task, state, int(a))
            assert rec.rewards[t] == pytest.approx(rew)
        assert rec.meta["accumulated_reward"] == pytest.approx(
            float(rec.rewards.sum()), abs=1e-4)

    def test_draw_distributions_uniform(self):
        ps, eps = [], []
        for seed in range(200):
            task = core.generate_task(small_config(4), 0)
            rec = rollout.collect_episode(
                task, rollout.RolloutConfig(episode_len=4), seed,
                render=False)
            ps.append(rec.meta["behavior_p"])
            eps.append(rec.meta["epsilon"])
        assert stats.kstest(ps, "uniform", args=(0, 0.5)).pvalue > 0.01
        assert stats.kstest(eps, "uniform", args=(0, 0.8)).pvalue > 0.01


class TestReplay:
    def test_replay_reproduces_frames(self):
        rec = quick_record(seed=7, episode_len=48)
        frames = rollout.replay_frames(rec.manifest, rec.behavior_actions)
        assert np.array_equal(frames, rec.frames)


class TestPack:
    def test_round_trip(self, tmp_path):
        rec = quick_record(seed=1, episode_len=16)
        rollout.write_pack(rec, tmp_path / "ep")
        back = rollout.read_pack(tmp_path / "ep")
        assert np.array_equal(back.frames, rec.frames)
        assert np.array_equal(back.behavior_actions, rec.behavior_actions)
        assert np.array_equal(back.reference_actions, rec.reference_actions)
        assert np.array_equal(back.rewards, rec.rewards)
        assert np.array_equal(back.commands, rec.commands)
        assert back.manifest == rec.manifest

    def test_write_is_bit_exact_rerun(self, tmp_path):
        rec = quick_record(seed=1, episode_len=16)
        rollout.write_pack(rec, tmp_path / "a")
        rollout.write_pack(rec, tmp_path / "b")
        for name in ("frames.bin", "actions.bin", "labels.bin",
                     "rewards.bin", "commands.bin", "meta.json",
                     "checksums.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    @pytest.mark.parametrize("chunk", ["frames.bin", "actions.bin",
                                       "labels.bin", "rewards.bin",
                                       "commands.bin", "meta.json"])
    def test_corruption_detected_per_chunk(self, tmp_path, chunk):
        rec = quick_record(seed=2, episode_len=8)
        p = rollout.write_pack(rec, tmp_path / "ep")
        raw = bytearray((p / chunk).read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        (p / chunk).write_bytes(bytes(raw))
        with pytest.raises(rollout.PackChecksumError) as exc:
            rollout.read_pack(p)
        assert exc.value.chunk == chunk

    def test_missing_chunk_is_truncation(self, tmp_path):
        rec = quick_record(seed=2, episode_len=8)
        p = rollout.write_pack(rec, tmp_path / "ep")
        (p / "rewards.bin").unlink()
        with pytest.raises(rollout.PackTruncatedError):
            rollout.read_pack(p)

    def test_wrong_version_rejected(self, tmp_path):
        rec = quick_record(seed=2, episode_len=8)
        p = rollout.write_pack(rec, tmp_path / "ep")
        meta = json.loads((p / "meta.json").read_text())
        meta["version"] = 99
        blob = json.dumps(meta, sort_keys=True).encode()
        (p / "meta.json").write_bytes(blob)
        sums = json.loads((p / "checksums.json").read_text())
        sums["meta.json"] = rollout._checksum(blob)
        (p / "checksums.json").write_text(json.dumps(sums, sort_keys=True))
        with pytest.raises(rollout.PackVersionError):
            rollout.read_pack(p)


class TestCorpus:
    def test_pool_manifests_distinct(self):
        pool = rollout.make_maze_pool(6, small_config(), seed=3)
        assert len({m["seed"] for m in pool}) == 6
        grids = {core.task_from_manifest(m).grid.tobytes() for m in pool}
        assert len(grids) == 6

    def test_build_corpus_uses_pool(self, tmp_path):
        pool = rollout.make_maze_pool(3, small_config(16), seed=4)
        manifest = rollout.build_corpus(
            pool, 5, rollout.RolloutConfig(episode_len=16),
            small_config(16), tmp_path, seed=4, render=False)
        pool_seeds = {m["seed"] for m in pool}
        assert all(e["task_seed"] in pool_seeds for e in manifest["entries"])
        assert (tmp_path / "corpus.json").exists()
        assert len(manifest["entries"]) == 5

    def test_build_corpus_fresh_tasks_distinct(self, tmp_path):
        manifest = rollout.build_corpus(
            None, 4, rollout.RolloutConfig(episode_len=8),
            small_config(8), tmp_path, seed=9, render=False)
        seeds = [e["task_seed"] for e in manifest["entries"]]
        assert len(set(seeds)) == 4
