import numpy as np
import pytest

from levelflow.checkpoint import (
    load_checkpoint,
    policy_from_checkpoint,
    save_checkpoint,
    trainer_from_checkpoint,
)
from levelflow.config import (
    RunConfig,
    config_from_dict,
    default_config,
    parse_config,
    render_config,
)
from levelflow.errors import CheckpointError, ConfigError
from levelflow.training import Trainer, fit_condition_models


def small_config(**kw):
    base = dict(game="sokoban", seed_sizes=[(3, 3)], iterations=4, seed=9,
                batch_size=8, replay_batch=4, checkpoint_every=0)
    base.update(kw)
    return RunConfig(**base)


def test_config_round_trip():
    cfg = default_config("sokoban", seed=42)
    assert parse_config(render_config(cfg)) == cfg


def test_config_round_trip_all_games():
    for game in ("sokoban", "zelda", "dave"):
        cfg = default_config(game)
        assert parse_config(render_config(cfg)) == cfg


def test_config_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config fields: bogus"):
        config_from_dict({"game": "sokoban", "seed_sizes": [[3, 3]],
                          "bogus": 1})


def test_config_validation_messages():
    with pytest.raises(ConfigError, match="seed_sizes"):
        RunConfig(game="sokoban", seed_sizes=[])
    with pytest.raises(ConfigError, match="distinct"):
        RunConfig(game="sokoban", seed_sizes=[(3, 3)],
                  desired_sizes=[(3, 3)])
    with pytest.raises(ConfigError, match="iterations"):
        RunConfig(game="sokoban", seed_sizes=[(3, 3)], iterations=-1)


def test_preset_toggles_match_game_defaults():
    assert default_config("sokoban").property_reward is True
    assert default_config("zelda").property_reward is True
    assert default_config("dave").property_reward is False
    for game in ("sokoban", "zelda", "dave"):
        cfg = default_config(game)
        assert cfg.diversity_sampling and cfg.augmentation


def test_preset_size_curricula():
    assert default_config("sokoban").all_sizes == [
        (3, 3), (4, 4), (5, 5), (6, 6), (7, 7)]
    assert default_config("zelda").all_sizes == [
        (3, 4), (3, 6), (5, 4), (5, 6), (7, 6), (5, 11), (7, 11)]


def trained_trainer(iters=6, **kw):
    trainer = Trainer(small_config(**kw))
    for _ in range(iters):
        trainer.run_iteration()
    return trainer


def test_checkpoint_save_load_save_byte_identical(tmp_path):
    trainer = trained_trainer()
    models = fit_condition_models(trainer)
    path1 = tmp_path / "a.ckpt"
    save_checkpoint(path1, trainer, models)
    ckpt = load_checkpoint(path1)
    restored = trainer_from_checkpoint(ckpt)
    path2 = tmp_path / "b.ckpt"
    save_checkpoint(path2, restored, ckpt.gmms)
    assert path1.read_bytes() == path2.read_bytes()


def test_checkpoint_preserves_trainer_state(tmp_path):
    trainer = trained_trainer(10)
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, trainer, {})
    ckpt = load_checkpoint(path)
    assert ckpt.iteration == 10
    assert ckpt.config == trainer.config
    restored = trainer_from_checkpoint(ckpt)
    assert restored.buffer.count((3, 3)) == trainer.buffer.count((3, 3))
    for name, tensor in trainer.store.items():
        stored = restored.store[name].data
        assert np.allclose(stored, tensor.data, atol=1e-6)  # f32 storage


def test_resume_is_deterministic(tmp_path):
    trainer = trained_trainer(5)
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, trainer, {})
    r1 = trainer_from_checkpoint(load_checkpoint(path))
    r2 = trainer_from_checkpoint(load_checkpoint(path))
    for _ in range(3):
        s1 = r1.run_iteration()
        s2 = r2.run_iteration()
        assert s1.loss == s2.loss
    for name, tensor in r1.store.items():
        assert np.array_equal(tensor.data, r2.store[name].data)
    assert r1.buffer.count((3, 3)) == r2.buffer.count((3, 3))


def test_policy_from_checkpoint_generates(tmp_path):
    trainer = trained_trainer()
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, trainer, fit_condition_models(trainer))
    ckpt = load_checkpoint(path)
    policy, game = policy_from_checkpoint(ckpt)
    traj = policy.rollout(np.zeros(2), 9, 9, np.random.default_rng(0))
    assert traj.tiles.shape == (81,)
    for name in ("policy/action/w0", "policy/gru1/wz"):
        assert np.allclose(policy.store[name].data,
                           trainer.store[name].data, atol=1e-6)


def test_checkpoint_missing_file_raises():
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint("/nonexistent/path.ckpt")


def test_checkpoint_corrupt_raises(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_zero_iteration_checkpoint_valid(tmp_path):
    trainer = Trainer(small_config())
    path = tmp_path / "fresh.ckpt"
    save_checkpoint(path, trainer, {})
    ckpt = load_checkpoint(path)
    assert ckpt.iteration == 0
    assert ckpt.buffer_payload == []
    restored = trainer_from_checkpoint(ckpt)
    assert restored.buffer.count((3, 3)) == 0


def test_checkpoint_embeds_condition_models(tmp_path):
    from oracles import random_playable_levels

    trainer = trained_trainer(2)
    rng = np.random.default_rng(4)
    for level, analysis in random_playable_levels(trainer.game, 3, 3, rng, 20):
        trainer.buffer.insert(level, analysis)
    models = fit_condition_models(trainer)
    assert (3, 3) in models
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, trainer, models)
    ckpt = load_checkpoint(path)
    assert set(ckpt.gmms) == set(models)
    for size, model in models.items():
        assert np.array_equal(ckpt.gmms[size].means, model.means)
    # replay buffer round-trips with keys and measured controls intact
    restored = trainer_from_checkpoint(ckpt)
    originals = trainer.buffer.entries((3, 3))
    loaded = restored.buffer.entries((3, 3))
    assert len(loaded) == len(originals)
    for a, b in zip(originals, loaded):
        assert a.level == b.level
        assert a.key == b.key
        assert np.array_equal(a.u, b.u)
