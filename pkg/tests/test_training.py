import json
import math

import numpy as np
import pytest

from specreplay.autodiff import ops
from specreplay.errors import ConfigError, InputError, NumericError
from specreplay.features import FeatureConfig, spectrogram
from specreplay.models import build_model
from specreplay.pipeline import _model_cfg, desk_config
from specreplay.training import Dataset, TrainConfig, make_batches, train_model


def toy_dataset(rng, n=24, dim=6, shift=1.5):
    y = np.arange(n) % 2
    x = rng.standard_normal((n, dim)) + shift * y[:, None]
    return Dataset(list(x.astype(np.float32)), y, [f"u{i}" for i in range(n)])


def toy_model(seed=0, dim=6):
    return build_model("ivec", {"input_dim": dim, "hidden": (16, 16)}, np.random.default_rng(seed), np.float32)


def snapshot(model):
    return {k: v.copy() for k, v in model.state_dict().items()}


class TestBatches:
    def test_sizes(self, rng):
        ds = toy_dataset(rng, n=10)
        assert [len(y) for _, y in make_batches(ds, 4, np.random.default_rng(0))] == [4, 4, 2]

    def test_order_reproducible(self, rng):
        ds = toy_dataset(rng, n=17)
        a = [y.tolist() for _, y in make_batches(ds, 4, np.random.default_rng(5))]
        b = [y.tolist() for _, y in make_batches(ds, 4, np.random.default_rng(5))]
        c = [x.tobytes() for x, _ in make_batches(ds, 4, np.random.default_rng(6))]
        assert a == b and c != [x.tobytes() for x, _ in make_batches(ds, 4, np.random.default_rng(5))]

    def test_training_tensors_fixed_to_120_frames(self, small_corpus):
        clips, _ = small_corpus
        cfg = FeatureConfig()
        assert cfg.target_frames == 120
        items = [spectrogram(c, cfg).values for c in clips[:9]]
        assert len({i.shape[0] for i in items}) > 1
        ds = Dataset(items, np.arange(9) % 2, list(range(9)), cfg.target_frames)
        for x, _ in make_batches(ds, 4, np.random.default_rng(0)):
            assert x.shape[1:] == (120, cfg.n_bins, 1)

    def test_empty(self):
        with pytest.raises(InputError):
            next(make_batches(Dataset([], np.zeros(0, int), []), 4, np.random.default_rng(0)))


class TestTrainLoop:
    def test_null_update_is_bit_identical(self, rng):
        model = toy_model()
        before = snapshot(model)
        # batchnorm running statistics are buffers, not parameters; compare parameters only
        names = [k for k, _ in model.named_parameters()]
        cfg = TrainConfig(batch_size=8, epochs=1, lr=0.0, weight_decay=0.0, center_weight=0.0)
        train_model(model, toy_dataset(rng), cfg)
        after = model.state_dict()
        for k in names:
            assert before[k].tobytes() == after[k].tobytes(), k

    def test_reproducible_log(self, rng):
        ds = toy_dataset(rng)
        cfg = TrainConfig(batch_size=8, epochs=3)
        _, log_a, _ = train_model(toy_model(), ds, cfg, ds)
        _, log_b, _ = train_model(toy_model(), ds, cfg, ds)
        assert log_a.lines() == log_b.lines()
        records = [json.loads(line) for line in log_a.lines().splitlines()]
        steps = [r["step"] for r in records if r["event"] == "step"]
        assert steps == list(range(1, len(steps) + 1))
        assert "wall_clock_s" not in records[-1]
        assert "wall_clock_s" in json.loads(log_a.lines(timing=True).splitlines()[-1])

    def test_learns_and_center_loss_falls(self, rng):
        ds = toy_dataset(rng, n=64, shift=3.0)
        _, tlog, extras = train_model(toy_model(), ds, TrainConfig(batch_size=16, epochs=30, lr=3e-3))
        assert tlog.epoch_train_acc[-1] >= 0.95
        k = 4 * 3  # steps in the first three epochs
        assert np.mean(tlog.center_losses[-k:]) < np.mean(tlog.center_losses[:k])
        assert extras["centers"].shape == (2, 16)

    def test_best_dev_checkpoint_kept(self, rng):
        ds = toy_dataset(rng, n=40, shift=2.0)
        model = toy_model()
        state, tlog, _ = train_model(model, ds, TrainConfig(batch_size=8, epochs=5), ds)
        best = min(tlog.dev_evals, key=lambda d: d["eer"])
        assert tlog.best_epoch == best["epoch"]
        for k, v in model.state_dict().items():
            np.testing.assert_array_equal(v, state[k])

    def test_nan_loss_aborts_with_diagnostic(self, rng):
        ds = toy_dataset(rng)
        ds.items[0] = np.full(6, np.nan, dtype=np.float32)
        with pytest.raises(NumericError, match="lr=.*grad norms"):
            train_model(toy_model(), ds, TrainConfig(batch_size=24, epochs=1))

    def test_single_class_rejected(self, rng):
        ds = toy_dataset(rng)
        ds.labels[:] = 0
        with pytest.raises(InputError):
            train_model(toy_model(), ds, TrainConfig(batch_size=8, epochs=1))

    @pytest.mark.parametrize("kw", [{"batch_size": 1}, {"epochs": 0}, {"lr": -1.0}, {"dtype": "float16"}])
    def test_config_validation(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()

    def test_weight_decay_default(self):
        assert TrainConfig().weight_decay == 1e-4


INPUT_SHAPES = {"spec": (8, 32, 1025, 1), "wave": (8, 3888), "ivec": (8, 50)}


def desk_model(kind, seed):
    cfg = desk_config(kind, seed=seed)
    return build_model(kind, _model_cfg(cfg), np.random.default_rng([seed, 1]), np.float64)


@pytest.mark.parametrize("kind", ["spec", "wave", "ivec"])
def test_every_parameter_receives_gradient_at_first_step(kind):
    model = desk_model(kind, 0)
    x = np.random.default_rng(0).standard_normal(INPUT_SHAPES[kind])
    y = np.array([0, 1] * 4)
    logits, emb = model(x)
    loss = ops.cross_entropy(logits, y) + ops.center_loss(emb, y, np.zeros((2, emb.shape[1]))) * 0.01
    loss.backward()
    for name, p in model.named_parameters():
        assert p.grad is not None and np.linalg.norm(p.grad) > 0, name


@pytest.mark.xfail(strict=True, reason="He-normal init on every layer gives initial CE around 0.8-1.0; see ledger")
def test_first_step_loss_near_ln2():
    losses = []
    for kind in ("spec", "wave", "ivec"):
        for seed in range(3):
            x = np.random.default_rng(seed).standard_normal(INPUT_SHAPES[kind])
            logits, _ = desk_model(kind, seed)(x)
            losses.append(ops.cross_entropy(logits, np.array([0, 1] * 4)).item())
    assert all(abs(v - math.log(2)) <= 0.1 for v in losses)
