import math

import numpy as np
import pytest

from specreplay.autodiff import ops
from specreplay.errors import ConfigError, InputError, ShapeError
from specreplay.features import FeatureConfig, SpectroTensor, spectrogram, stack_channels
from specreplay.models import (
    IvecDnnConfig, SpecCnnGruConfig, WaveCnnGruConfig, build_ivec_dnn, build_model, build_spec_cnngru,
    build_wave_cnngru, infer_score, model_config_dict, softmax_scores,
)

TABLE1 = {
    "Conv1": (120, 1025, 16),
    "Res1": (60, 257, 32),
    "Res2": (30, 65, 64),
    "Res3": (15, 17, 128),
    "Pool": (15, 1, 128),
    "GRU": (512,),
    "Dense1": (64,),
    "Output": (2,),
}

SMALL_SPEC = dict(input_bins=65, conv1_maps=4, res_maps=(4, 6, 8), gru_units=5, dense_units=3)
SMALL_WAVE = dict(frame_maps=4, block_maps=(4, 4, 6, 6), gru_units=5, dense_units=3)


@pytest.fixture(scope="module")
def full_spec_model():
    return build_spec_cnngru(SpecCnnGruConfig(), np.random.default_rng(0), np.float32)


class TestSpecModel:
    def test_table1_shape_chain(self, full_spec_model):
        chain = full_spec_model.shape_chain(120)
        for row in ("Res1", "Res2", "Res3", "Pool", "GRU", "Dense1", "Output"):
            assert chain[row] == TABLE1[row], row
        # one-sided 2048-point spectrum: 1025 bins, not the 1024 printed for Conv1
        assert chain["Conv1"] == (120, 1025, 16)
        assert full_spec_model.pooled_width() == 17

    @pytest.mark.parametrize("frames", [8, 9, 13, 64, 121])
    def test_ceil_mode_frame_counts(self, frames):
        m = build_spec_cnngru(SpecCnnGruConfig(**SMALL_SPEC), np.random.default_rng(0))
        chain = m.shape_chain(frames)
        assert [chain[f"Res{i}"][0] for i in (1, 2, 3)] == [math.ceil(frames / 2 ** i) for i in (1, 2, 3)]
        assert [chain[f"Res{i}"][1] for i in (1, 2, 3)] == [17, 5, 2]

    def test_minimum_length(self):
        m = build_spec_cnngru(SpecCnnGruConfig(**SMALL_SPEC), np.random.default_rng(0))
        assert m.cfg.min_frames == 8
        chain = m.shape_chain(8)
        assert [chain["Conv1"][0]] + [chain[f"Res{i}"][0] for i in (1, 2, 3)] == [8, 4, 2, 1]
        with pytest.raises(ShapeError):
            m.shape_chain(7)

    def test_channel_count_validated(self):
        with pytest.raises(ConfigError):
            build_spec_cnngru(SpecCnnGruConfig(input_channels=4), np.random.default_rng(0))
        with pytest.raises(ConfigError):
            build_spec_cnngru(SpecCnnGruConfig(input_channels=0), np.random.default_rng(0))

    def test_input_shape_checked(self):
        m = build_spec_cnngru(SpecCnnGruConfig(**SMALL_SPEC), np.random.default_rng(0))
        with pytest.raises(ShapeError):
            m(np.zeros((1, 16, 64, 1)))

    def test_deterministic(self):
        x = np.random.default_rng(1).standard_normal((2, 16, 65, 1))
        outs = []
        for _ in range(2):
            m = build_spec_cnngru(SpecCnnGruConfig(**SMALL_SPEC), np.random.default_rng(3)).eval()
            outs.append(m(x)[0].data.tobytes())
        assert outs[0] == outs[1]

    def test_whole_utterance_lengths_without_rebuild(self):
        m = build_spec_cnngru(SpecCnnGruConfig(**SMALL_SPEC), np.random.default_rng(0)).eval()
        for frames in (8, 37, 120, 301):
            logits, emb = m(np.zeros((1, frames, 65, 1)))
            assert logits.shape == (1, 2) and emb.shape == (1, 3)

    def test_all_parameters_receive_gradient(self):
        m = build_spec_cnngru(SpecCnnGruConfig(**SMALL_SPEC, input_channels=2), np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((4, 16, 65, 2))
        logits, _ = m(x)
        ops.cross_entropy(logits, np.array([0, 1, 0, 1])).backward()
        for name, p in m.named_parameters():
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name

    def test_stacked_channels_feed_conv1(self, rng):
        cfg = FeatureConfig(n_fft=512, window_ms=30.0, shift_ms=10.0)
        x = rng.standard_normal(3000)
        parts = [spectrogram(x, FeatureConfig(n_fft=512, window_ms=30.0, shift_ms=10.0, channels=(k,)))
                 for k in ("magnitude", "psd", "phase")]
        stacked = stack_channels(parts)
        m = build_spec_cnngru(SpecCnnGruConfig(input_bins=cfg.n_bins, input_channels=3, conv1_maps=2,
                                               res_maps=(2, 2, 2), gru_units=3, dense_units=2), rng)
        assert isinstance(stacked, SpectroTensor)
        assert 0.0 <= infer_score(m, stacked.values) <= 1.0


class TestWaveModel:
    def test_full_size_frame_plan(self):
        m = build_wave_cnngru(WaveCnnGruConfig(gru_units=8, dense_units=4), np.random.default_rng(0), np.float32)
        assert 26244 == 4 * 3 ** 8
        m.eval()
        m(np.zeros((1, 26244), dtype=np.float32))
        assert m.shapes["Frames"] == (8748, 64)
        assert m.shapes["Res4"] == (108, 128)
        assert m.shapes["Output"] == (2,)

    def test_gru_and_dense_widths(self):
        cfg = WaveCnnGruConfig()
        assert (cfg.gru_units, cfg.dense_units, cfg.block_maps[-1], cfg.n_classes) == (512, 64, 128, 2)

    def test_zero_input_finite(self):
        m = build_wave_cnngru(WaveCnnGruConfig(**SMALL_WAVE), np.random.default_rng(0)).eval()
        logits, _ = m(np.zeros((2, 729)))
        assert np.all(np.isfinite(logits.data))

    def test_too_short(self):
        m = build_wave_cnngru(WaveCnnGruConfig(**SMALL_WAVE), np.random.default_rng(0))
        assert m.cfg.min_samples == 243
        with pytest.raises(InputError):
            m(np.zeros((1, 242)))

    def test_all_parameters_receive_gradient(self):
        m = build_wave_cnngru(WaveCnnGruConfig(**SMALL_WAVE), np.random.default_rng(0))
        logits, _ = m(np.random.default_rng(1).standard_normal((4, 486)) * 0.1)
        ops.cross_entropy(logits, np.array([0, 1, 1, 0])).backward()
        for name, p in m.named_parameters():
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name


class TestIvecModel:
    def test_parameter_count(self):
        m = build_ivec_dnn(IvecDnnConfig(), np.random.default_rng(0), np.float32)
        expected = 200 * 1024 + 1024 + 2 * (1024 * 1024 + 1024) + 1024 * 2 + 2
        assert expected == 2_307_074
        assert m.num_parameters() == expected
        assert len(m.hidden) == 3 and all(layer.weight.shape[1] == 1024 for layer in m.hidden)
        assert m.cfg.input_dim == 200

    def test_logits_finite(self, rng):
        m = build_ivec_dnn(IvecDnnConfig(hidden=(16, 16, 16)), rng)
        logits, emb = m(rng.standard_normal((5, 200)))
        assert logits.shape == (5, 2) and emb.shape == (5, 16)
        assert np.all(np.isfinite(logits.data))

    def test_shape_error(self, rng):
        with pytest.raises(ShapeError):
            build_ivec_dnn(IvecDnnConfig(hidden=(4, 4, 4)), rng)(np.zeros((1, 199)))


class TestScoring:
    def test_symmetric_logits(self):
        assert softmax_scores(np.array([[0.0, 0.0]]))[0] == 0.5

    def test_logistic_closed_form(self):
        assert softmax_scores(np.array([[3.0, -3.0]]))[0] == pytest.approx(1 / (1 + math.exp(-6)), abs=1e-15)
        assert softmax_scores(np.array([[3.0, -3.0]]))[0] == pytest.approx(0.99753, abs=1e-5)

    def test_range(self, rng):
        s = softmax_scores(rng.standard_normal((100, 2)) * 50)
        assert np.all((s >= 0) & (s <= 1))

    def test_infer_score_range_and_mode_restored(self, rng):
        m = build_ivec_dnn(IvecDnnConfig(input_dim=6, hidden=(4, 4, 4)), rng)
        s = infer_score(m, rng.standard_normal(6))
        assert 0 <= s <= 1 and m.training


class TestBuildModel:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            build_model("cqcc")

    @pytest.mark.parametrize("kind,cfg", [("spec", SMALL_SPEC), ("wave", SMALL_WAVE), ("ivec", {"hidden": [8, 8, 8]})])
    def test_config_round_trip(self, kind, cfg):
        m = build_model(kind, cfg, np.random.default_rng(0))
        again = build_model(kind, model_config_dict(m), np.random.default_rng(0))
        assert model_config_dict(again) == model_config_dict(m)
        for (ka, a), (kb, b) in zip(m.state_dict().items(), again.state_dict().items()):
            assert ka == kb and np.array_equal(a, b)
