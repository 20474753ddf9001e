import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glass.errors import ConfigError, ShapeError
from glass.gaze_data import BehaviorLabel, LabeledWindow, VADLabel
from glass.emotion import (ChunkConfig, FinetuneMetrics, build_head, chunk, encoder_features,
                           head_forward, macro_f1, run_finetune, split_dataset, summarize,
                           vad_metrics, write_finetune_csv)
from glass.model import GlassConfig, GlassModel
from glass.pretrain import OptimConfig
from helpers import make_labeled_behavior, make_labeled_vad


class TestEncoderFeatures:
    def test_constant_rows_zero_derivatives(self):
        enc = np.ones((6, 4)) * 3.0
        f = encoder_features(enc)
        assert f.shape == (6, 12)
        np.testing.assert_allclose(f[:, 4:], 0.0, atol=1e-12)

    def test_linear_ramp(self):
        enc = np.arange(8.0)[:, None] * np.ones((1, 3))
        f = encoder_features(enc)
        np.testing.assert_allclose(f[:, 3:6], 1.0, atol=1e-12)  # d1 constant everywhere
        np.testing.assert_allclose(f[1:-1, 6:], 0.0, atol=1e-12)  # d2 zero in the interior

    def test_width_is_three_d(self):
        f = encoder_features(np.zeros((5, 32)))
        assert f.shape[1] == 96

    def test_too_short_rejected(self):
        with pytest.raises(ShapeError):
            encoder_features(np.zeros((2, 4)))

    @given(seed=st.integers(0, 50), n=st.integers(4, 12))
    @settings(max_examples=25, deadline=None)
    def test_time_reversal_property(self, seed, n):
        enc = np.random.default_rng(seed).normal(size=(n, 5))
        f = encoder_features(enc)
        fr = encoder_features(enc[::-1])
        d = 5
        # interior rows: d1 negated, d2 unchanged under time reversal
        np.testing.assert_allclose(fr[1:-1, d:2 * d], -f[1:-1, d:2 * d][::-1], atol=1e-12)
        np.testing.assert_allclose(fr[1:-1, 2 * d:], f[1:-1, 2 * d:][::-1], atol=1e-12)


class TestChunk:
    def test_ten_rows_one_second_chunks(self):
        f = np.arange(10.0)[:, None] * np.ones((1, 4))
        cfg = ChunkConfig(chunk_seconds=1.0, patch_rate=2.0)
        out = chunk(f, cfg)
        assert out.shape == (5, 4)
        np.testing.assert_allclose(out[:, 0], [0.5, 2.5, 4.5, 6.5, 8.5])

    def test_full_window_single_chunk(self):
        f = np.random.default_rng(0).normal(size=(10, 4))
        cfg = ChunkConfig(chunk_seconds=5.0, patch_rate=2.0)
        out = chunk(f, cfg)
        assert out.shape == (1, 4)
        np.testing.assert_allclose(out[0], f.mean(axis=0), atol=1e-12)

    def test_remainder_chunk_kept(self):
        f = np.random.default_rng(1).normal(size=(10, 4))
        cfg = ChunkConfig(chunk_seconds=4.0, patch_rate=2.0)
        out = chunk(f, cfg)
        assert out.shape == (2, 4)
        np.testing.assert_allclose(out[0], f[:8].mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(out[1], f[8:].mean(axis=0), atol=1e-12)

    def test_sub_patch_chunk_rejected(self):
        with pytest.raises(ConfigError):
            ChunkConfig(chunk_seconds=0.25, patch_rate=2.0)

    @given(seed=st.integers(0, 30), rows=st.integers(1, 24), size=st.integers(1, 8))
    @settings(max_examples=40, deadline=None)
    def test_mass_preservation(self, seed, rows, size):
        f = np.random.default_rng(seed).normal(size=(rows, 3))
        cfg = ChunkConfig(chunk_seconds=float(size), patch_rate=1.0)
        out = chunk(f, cfg)
        weights = [min(size, rows - i) for i in range(0, rows, size)]
        weighted = (out * np.asarray(weights)[:, None]).sum(axis=0) / rows
        np.testing.assert_allclose(weighted, f.mean(axis=0), atol=1e-6)


class TestHeads:
    def chunks(self, b=3, c=6, f=12, seed=0):
        return np.random.default_rng(seed).normal(size=(b, c, f)).astype(np.float32)

    def test_mlp_chunk_permutation_invariant_exactly(self):
        x = self.chunks()
        head = build_head("mlp", 12, "vad", np.random.default_rng(0))
        a = head_forward(x, head)
        b = head_forward(x[:, ::-1], head)
        np.testing.assert_allclose(a, b, atol=0.0)

    def test_vad_outputs_in_unit_interval(self):
        x = self.chunks(seed=5) * 10.0
        for kind in ("mlp", "tcn", "gru", "transformer"):
            head = build_head(kind, 12, "vad", np.random.default_rng(1))
            out = head_forward(x, head)
            assert out.shape == (3, 3)
            assert (out >= 0.0).all() and (out <= 1.0).all(), kind

    def test_behavior_three_logits(self):
        x = self.chunks()
        for kind in ("mlp", "tcn", "gru", "transformer"):
            head = build_head(kind, 12, "behavior", np.random.default_rng(2))
            assert head_forward(x, head).shape == (3, 3)

    def test_eval_deterministic(self):
        x = self.chunks(seed=9)
        for kind in ("mlp", "tcn", "gru", "transformer"):
            head = build_head(kind, 12, "vad", np.random.default_rng(3))
            assert np.array_equal(head_forward(x, head), head_forward(x, head)), kind

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            build_head("rnn", 12, "vad", np.random.default_rng(0))

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            build_head("mlp", 12, "regression", np.random.default_rng(0))


class TestVadMetrics:
    def test_perfect(self):
        labels = [VADLabel(0.2, 0.4, 0.6), VADLabel(0.8, 0.1, 0.5)]
        mae, r = vad_metrics(labels, labels)
        assert mae == 0.0
        assert r == pytest.approx(1.0)

    def test_shift_keeps_correlation(self):
        rng = np.random.default_rng(0)
        labels = rng.uniform(0.1, 0.7, size=(10, 3))
        preds = labels + 0.1
        mae, r = vad_metrics(preds, labels)
        assert mae == pytest.approx(0.1, abs=1e-12)
        assert r == pytest.approx(1.0, abs=1e-12)

    def test_hand_example(self):
        mae, _ = vad_metrics([[0.5, 0.5, 0.5]], [[0.328, 0.410, 0.388]])
        assert mae == pytest.approx((0.172 + 0.090 + 0.112) / 3, abs=1e-12)
        assert mae == pytest.approx(0.12467, abs=5e-6)

    def test_zero_variance_reports_missing(self):
        _, r = vad_metrics([[0.5, 0.5, 0.5]] * 4, [[0.1, 0.2, 0.3]] * 4)
        assert r is None

    def test_order_invariance(self):
        rng = np.random.default_rng(1)
        preds = rng.uniform(size=(8, 3))
        labels = rng.uniform(size=(8, 3))
        mae1, _ = vad_metrics(preds, labels)
        perm = rng.permutation(8)
        mae2, _ = vad_metrics(preds[perm], labels[perm])
        assert mae1 == pytest.approx(mae2, abs=1e-15)


class TestMacroF1:
    def test_perfect_three_class(self):
        labels = ["laugh", "sigh", "cry"] * 5
        assert macro_f1(labels, labels) == 1.0

    def test_all_laugh_on_balanced_set(self):
        labels = ["laugh"] * 10 + ["sigh"] * 10 + ["cry"] * 10
        assert macro_f1(["laugh"] * 30, labels) == pytest.approx(1 / 6, abs=1e-12)

    def test_disjoint_classes_zero(self):
        assert macro_f1(["laugh"] * 4, ["sigh"] * 4) == 0.0

    def test_order_invariance(self):
        rng = np.random.default_rng(2)
        preds = [["laugh", "sigh", "cry"][i] for i in rng.integers(0, 3, size=20)]
        labels = [["laugh", "sigh", "cry"][i] for i in rng.integers(0, 3, size=20)]
        perm = rng.permutation(20)
        assert macro_f1(preds, labels) == pytest.approx(
            macro_f1([preds[i] for i in perm], [labels[i] for i in perm]), abs=1e-15)

    def test_accepts_label_objects(self):
        labels = [BehaviorLabel("laugh"), BehaviorLabel("cry")]
        assert macro_f1(labels, labels) == pytest.approx(2 / 3)  # sigh absent on both sides


def tiny_model():
    cfg = GlassConfig.sized("small", input_frames=150, output_frames=150)
    return GlassModel(cfg, rng=np.random.default_rng(0))


def fast_optim(steps=80):
    return OptimConfig(base_lr=1e-2, warmup_steps=10, total_steps=steps, batch_size=32)


class TestRunFinetune:
    @pytest.fixture(scope="class")
    @staticmethod
    def vad_windows():
        return make_labeled_vad(n_subjects=5, duration_s=80.0)

    @pytest.fixture(scope="class")
    @staticmethod
    def behavior_windows():
        return make_labeled_behavior()

    def test_vad_positive_signal(self, vad_windows):
        model = tiny_model()
        cc = ChunkConfig(1.0, 2.0)
        result = run_finetune(model, vad_windows, "gru", cc, "vad", 0, fast_optim())
        assert result.metrics.pearson_r is not None and result.metrics.pearson_r > 0.2
        assert result.metrics.mae is not None
        assert result.metrics.input_seconds == pytest.approx(5.0)

    def test_frozen_encoder_untouched_bitwise(self, vad_windows):
        model = tiny_model()
        before = {n: p.data.copy() for n, p in model.named_parameters()}
        run_finetune(model, vad_windows, "mlp", ChunkConfig(1.0, 2.0), "vad", 0, fast_optim(30))
        for n, p in model.named_parameters():
            assert np.array_equal(before[n], p.data), n

    def test_joint_tuning_changes_encoder(self, vad_windows):
        model = tiny_model()
        before = {n: p.data.copy() for n, p in model.named_parameters()}
        run_finetune(model, vad_windows[:60], "mlp", ChunkConfig(1.0, 2.0), "vad", 0,
                     fast_optim(10), joint=True)
        changed = [n for n, p in model.named_parameters() if not np.array_equal(before[n], p.data)]
        assert changed

    def test_deterministic_per_seed(self, vad_windows):
        model = tiny_model()
        cc = ChunkConfig(1.0, 2.0)
        a = run_finetune(model, vad_windows, "mlp", cc, "vad", 1, fast_optim(30))
        b = run_finetune(model, vad_windows, "mlp", cc, "vad", 1, fast_optim(30))
        assert np.array_equal(a.test_predictions, b.test_predictions)
        assert a.metrics == b.metrics

    def test_five_seeds_summary(self, vad_windows):
        model = tiny_model()
        cc = ChunkConfig(1.0, 2.0)
        rows = [run_finetune(model, vad_windows, "mlp", cc, "vad", s, fast_optim(30)).metrics
                for s in range(5)]
        assert len(rows) == 5
        stats = summarize(rows)
        assert set(stats) == {"mae", "pearson_r"}
        mean, std = stats["mae"]
        assert mean > 0 and std >= 0

    def test_behavior_task(self, behavior_windows):
        model = tiny_model()
        result = run_finetune(model, behavior_windows, "mlp", ChunkConfig(1.0, 2.0), "behavior",
                              0, fast_optim(60))
        assert result.metrics.macro_f1 is not None
        assert 0.0 <= result.metrics.macro_f1 <= 1.0

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            run_finetune(tiny_model(), [], "mlp", ChunkConfig(1.0, 2.0), "vad", 0, fast_optim(10))

    def test_single_class_behavior_rejected(self):
        windows = [LabeledWindow(np.zeros((150, 6)), BehaviorLabel("laugh"), ("s", i))
                   for i in range(20)]
        with pytest.raises(ConfigError, match="single class"):
            run_finetune(tiny_model(), windows, "mlp", ChunkConfig(1.0, 2.0), "behavior", 0,
                         fast_optim(10))

    def test_wrong_window_length_rejected(self, vad_windows):
        cfg = GlassConfig.sized("small", input_frames=60, output_frames=60)
        model = GlassModel(cfg, rng=np.random.default_rng(0))
        with pytest.raises(ConfigError):
            run_finetune(model, vad_windows, "mlp", ChunkConfig(1.0, 2.0), "vad", 0, fast_optim(10))

    def test_wide_csv_schema(self, tmp_path):
        rows = [FinetuneMetrics(0, "vad", "gru", 1.0, 5.0, mae=0.1, pearson_r=0.5)]
        path = tmp_path / "r.csv"
        write_finetune_csv(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "seed,task,head,chunk_seconds,input_seconds,mae,pearson_r,macro_f1"
        assert lines[1].startswith("0,vad,gru,1.0,5.0,0.1,0.5,")

    def test_split_is_disjoint_and_complete(self, vad_windows):
        train, test = split_dataset(vad_windows, 0)
        assert len(train) + len(test) == len(vad_windows)
        assert set(map(id, train)).isdisjoint(set(map(id, test)))
