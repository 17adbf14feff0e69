import numpy as np
import pytest

from setflow.checkpoint import Checkpoint, CheckpointError
from setflow.config import RunConfig, config_diff, read_config_file, write_config_file
from setflow.data import CircleSource
from setflow.model import ModelConfig, SetFlowModel
from setflow.numerics import AdamState
from setflow.training import TrainConfig, TrainState, train, train_step


def small_config(**model):
    base = dict(global_dim=4, n_stacks=2, hidden=(8,), deepset_features=6, deepset_out=5)
    base.update(model)
    cfg = RunConfig(model=ModelConfig(**base))
    cfg.train.steps, cfg.io.log_interval = 10, 5
    return cfg


def trained_state(cfg, steps=6):
    rng = np.random.default_rng(cfg.train.seed)
    model = SetFlowModel(cfg.model, rng)
    state = TrainState(model, AdamState(lr=cfg.train.lr), rng, 0)
    tc = cfg.train_config()
    tc.steps = steps
    train(model, CircleSource(), tc, rng, state=state)
    return state


class TestCheckpoint:
    def test_save_load_save_identical(self, tmp_path):
        cfg = small_config(batchnorm=True)
        st = trained_state(cfg)
        ck = Checkpoint.capture(cfg, st.model, st.step, st.adam, st.rng)
        ck.save(tmp_path / "a.ckpt")
        Checkpoint.load(tmp_path / "a.ckpt").save(tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_fields_round_trip(self):
        cfg = small_config()
        st = trained_state(cfg)
        ck = Checkpoint.capture(cfg, st.model, st.step, st.adam, st.rng)
        back = Checkpoint.from_bytes(ck.to_bytes())
        assert back.config == cfg and back.step == 6 and back.rng_state == ck.rng_state
        assert back.params.keys() == ck.params.keys()
        assert all(np.array_equal(back.params[k], ck.params[k]) for k in ck.params)
        assert back.adam.t == st.adam.t
        assert all(np.array_equal(back.adam.m[k], st.adam.m[k]) for k in st.adam.m)

    def test_next_step_bit_identical(self):
        cfg = small_config(batchnorm=True)
        st = trained_state(cfg)
        ck = Checkpoint.from_bytes(Checkpoint.capture(cfg, st.model, st.step, st.adam, st.rng).to_bytes())
        model2, adam2 = ck.build_model(), ck.adam
        X = np.random.default_rng(9).standard_normal((4, 5, 2))
        z = np.random.default_rng(10).standard_normal((4, 4))
        st.model.train()
        model2.train()
        assert train_step(st.model, st.adam, X, None, z) == train_step(model2, adam2, X, None, z)
        assert ck.build_rng().random() == st.rng.random()

    def test_header_layout(self):
        cfg = small_config()
        raw = Checkpoint.capture(cfg, SetFlowModel(cfg.model, 0)).to_bytes()
        assert raw[:8] == b"SETFLOW\0"
        assert int.from_bytes(raw[8:12], "little") == 1

    @pytest.mark.parametrize("mutate,match", [
        (lambda r: b"NOTSETFL" + r[8:], "magic"),
        (lambda r: r[:8] + (7).to_bytes(4, "little") + r[12:], "version"),
        (lambda r: r[:-8], "truncated"),
        (lambda r: r + b"\0" * 8, "trailing"),
    ])
    def test_corruption_detected(self, mutate, match):
        cfg = small_config()
        raw = Checkpoint.capture(cfg, SetFlowModel(cfg.model, 0)).to_bytes()
        with pytest.raises(CheckpointError, match=match):
            Checkpoint.from_bytes(mutate(raw))

    def test_shape_mismatch_on_build(self):
        cfg = small_config()
        ck = Checkpoint.capture(cfg, SetFlowModel(cfg.model, 0))
        ck.config = small_config(global_dim=5)
        with pytest.raises(CheckpointError):
            ck.build_model()


class TestConfig:
    def test_presets(self):
        pc = RunConfig.preset("pointcloud")
        assert (pc.model.entity_dim, pc.model.global_dim, pc.model.n_stacks) == (3, 90, 6)
        assert pc.model.deepset_out == 100 and pc.train.set_sizes == (1000,)
        toy = RunConfig.preset("toy")
        assert toy.model.global_dim == 16 and toy.train.set_sizes == (3, 4, 5, 6)
        assert toy.train.batch_size == 16 and toy.train.lr == 5e-4
        with pytest.raises(ValueError):
            RunConfig.preset("images")

    def test_ini_round_trip(self, tmp_path):
        cfg = RunConfig.preset("pointcloud").with_overrides({"data.classes": "airplane, chair"})
        write_config_file(tmp_path / "c.ini", cfg)
        back = RunConfig.from_flat(read_config_file(tmp_path / "c.ini"))
        assert back == cfg
        assert back.data.classes == ("airplane", "chair")

    def test_overrides_coerce(self):
        cfg = RunConfig().with_overrides({"train.set_sizes": "[3, 4]", "model.batchnorm": "yes",
                                          "train.lr": "1e-3", "model.hidden": "32,32,32"})
        assert cfg.train.set_sizes == (3, 4) and cfg.model.batchnorm is True
        assert cfg.train.lr == 1e-3 and cfg.model.hidden == (32, 32, 32)

    @pytest.mark.parametrize("flat", [{"train.lr": "0"}, {"train.set_sizes": ""},
                                      {"model.global_dim": "0"}, {"data.labels": "true"}])
    def test_validation(self, flat):
        with pytest.raises(ValueError):
            RunConfig().with_overrides(flat).validate()

    def test_unknown_key_and_bad_value(self):
        with pytest.raises(KeyError):
            RunConfig().with_overrides({"model.depth": "3"})
        with pytest.raises(ValueError):
            RunConfig().with_overrides({"train.batch_size": "many"})

    def test_diff_ignores_steps_and_io(self):
        a = RunConfig()
        b = a.with_overrides({"train.steps": "99", "io.log_interval": "7"})
        assert config_diff(a, b) == {}
        c = a.with_overrides({"model.clamp": "3"})
        assert config_diff(a, c) == {"model.clamp": (5.0, 3.0)}


class TestTraining:
    def test_zero_steps_leaves_model(self):
        cfg = small_config()
        model = SetFlowModel(cfg.model, 0)
        before = {k: v.copy() for k, v in model.named_parameters().items()}
        state = train(model, CircleSource(), TrainConfig(steps=0), np.random.default_rng(0))
        assert state.step == 0 and state.log == []
        assert all(np.array_equal(before[k], v) for k, v in model.named_parameters().items())

    def test_log_rows_and_eval_mode(self):
        cfg = small_config(batchnorm=True)
        model = SetFlowModel(cfg.model, 0)
        seen = []
        state = train(model, CircleSource(), TrainConfig(steps=6, log_interval=3),
                      np.random.default_rng(0), on_log=lambda st, row: seen.append(row.step))
        assert seen == [3, 6] and [r.step for r in state.log] == [3, 6]
        assert all(np.isfinite(r.joint_ll) for r in state.log)
        assert not any(bn.training for bn in model._batchnorms())

    def test_training_improves_fit(self):
        cfg = small_config()
        model = SetFlowModel(cfg.model, 0)
        X = np.stack([np.random.default_rng(i).standard_normal((4, 2)) * 3 + 5 for i in range(16)])
        z = np.random.default_rng(99).standard_normal((16, 4))
        adam = AdamState(lr=1e-2)
        first = train_step(model, adam, X, None, z)[0]
        for _ in range(50):
            last = train_step(model, adam, X, None, z)[0]
        assert last > first + 5
