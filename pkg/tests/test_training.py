import numpy as np
import pytest

from pchier.data import MotionPreset, PointCloudSequence, generate_sequence
from pchier.diffcore import Tensor, backward
from pchier.metrics import chamfer_distance, emd
from pchier.network import ArchitectureConfig, build_params
from pchier.training import (
    LOSS_CSV_HEADER,
    TrainConfig,
    baseline_aggregate,
    copy_last_baseline,
    evaluate,
    loss,
    train,
    write_loss_curve,
    write_metrics_csv,
)


def toy_arch(variant="classic", seed=0):
    return ArchitectureConfig(variant=variant, levels=2, downsample_factor=4,
                              k=(4, 4), feature_widths=(6, 8),
                              fp_widths=((8,), (8,)), seed=seed)


def make_sequences(preset_name, seeds, n_points=16, n_frames=5, **kwargs):
    return [generate_sequence(MotionPreset(preset_name, seed=s, **kwargs),
                              n_points=n_points, n_frames=n_frames)
            for s in seeds]


class TestLoss:
    def test_identical_clouds_zero(self):
        pts = np.random.default_rng(0).normal(size=(6, 3))
        assert float(loss(Tensor(pts, requires_grad=True), pts).values) == 0.0

    def test_lambda_zero_equals_chamfer(self):
        rng = np.random.default_rng(1)
        pred = rng.normal(size=(6, 3))
        target = rng.normal(size=(6, 3))
        assert loss(pred, target, lambda_emd=0.0) == chamfer_distance(pred, target)

    def test_combination_matches_module_oracles(self):
        rng = np.random.default_rng(2)
        pred = rng.normal(size=(6, 3))
        target = rng.normal(size=(6, 3))
        expected = chamfer_distance(pred, target) + emd(pred, target)
        assert abs(loss(pred, target, lambda_emd=1.0) - expected) < 1e-12

    def test_differentiable(self):
        rng = np.random.default_rng(3)
        pred = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        target = rng.normal(size=(5, 3))
        backward(loss(pred, target))
        assert np.any(pred.grad != 0)

    def test_unequal_sizes_rejected_with_emd(self):
        with pytest.raises(ValueError):
            loss(np.zeros((2, 3)), np.ones((3, 3)), lambda_emd=1.0)


class TestTrain:
    def test_static_sequence_is_fixed_point(self):
        frame = np.random.default_rng(4).normal(size=(16, 3))
        static = PointCloudSequence(frames=[frame.copy() for _ in range(4)])
        cfg = toy_arch()
        params, curve = train(cfg, [static], TrainConfig(steps=3))
        assert all(p.loss == 0.0 for p in curve)
        fresh = build_params(cfg)
        for name in fresh.names():
            assert np.array_equal(params[name].values, fresh[name].values)

    def test_one_step_changes_parameters(self):
        seqs = make_sequences("rigid_translation", [0])
        cfg = toy_arch()
        params, curve = train(cfg, seqs, TrainConfig(steps=1))
        fresh = build_params(cfg)
        assert any(not np.array_equal(params[n].values, fresh[n].values)
                   for n in fresh.names())
        assert len(curve) == 1

    def test_reproducible_curve(self):
        seqs = make_sequences("translating_rotor", [0, 1])
        cfg = toy_arch(seed=2)
        tc = TrainConfig(steps=4, lambda_emd=1.0)
        _, curve_a = train(cfg, seqs, tc)
        _, curve_b = train(cfg, seqs, tc)
        assert [p.csv_row() for p in curve_a] == [p.csv_row() for p in curve_b]

    def test_too_short_sequence_rejected(self):
        short = PointCloudSequence(frames=[np.zeros((8, 3)), np.ones((8, 3))])
        with pytest.raises(ValueError, match="frames"):
            train(toy_arch(), [short], TrainConfig(steps=1, warmup_frames=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=0)
        with pytest.raises(ValueError):
            TrainConfig(lambda_emd=-1.0)
        with pytest.raises(ValueError):
            TrainConfig.from_json_dict({"steps": 5, "bogus": 1})

    def test_loss_curve_csv(self, tmp_path):
        seqs = make_sequences("rigid_translation", [0])
        _, curve = train(toy_arch(), seqs, TrainConfig(steps=2))
        path = tmp_path / "loss.csv"
        write_loss_curve(curve, path)
        lines = path.read_text().splitlines()
        assert lines[0] == LOSS_CSV_HEADER
        assert len(lines) == 3
        assert lines[1].split(",")[0] == "0"

    def test_loss_curve_running_minimum_non_increasing(self):
        seqs = make_sequences("translating_rotor", [0, 1])
        _, curve = train(toy_arch(seed=8), seqs, TrainConfig(steps=12))
        running = np.minimum.accumulate([p.loss for p in curve])
        assert all(a >= b for a, b in zip(running, running[1:]))


class TestEvaluate:
    def test_zero_head_equals_copy_last(self):
        seqs = make_sequences("translating_rotor", [0, 1])
        cfg = toy_arch()
        params = build_params(cfg)  # zero-initialized head
        result = evaluate(params, cfg, seqs)
        base = baseline_aggregate(seqs)
        assert result.aggregate == pytest.approx(base, abs=1e-15)

    def test_aggregate_is_mean_of_per_frame_rows(self):
        seqs = make_sequences("rigid_translation", [0, 1])
        cfg = toy_arch()
        params = build_params(cfg)
        result = evaluate(params, cfg, seqs)
        cds = [fm.report.cd for fm in result.frames]
        assert result.aggregate[0] == pytest.approx(np.mean(cds), abs=1e-12)

    def test_order_invariant(self):
        seqs = make_sequences("translating_rotor", [0, 1, 2])
        cfg = toy_arch(seed=5)
        params = build_params(cfg, zero_head=False)
        forward = evaluate(params, cfg, seqs)
        reverse = evaluate(params, cfg, list(reversed(seqs)))
        assert forward.aggregate == pytest.approx(reverse.aggregate, abs=1e-15)
        for name in forward.per_sequence:
            assert forward.per_sequence[name] == pytest.approx(
                reverse.per_sequence[name], abs=1e-15)

    def test_threaded_matches_serial(self):
        seqs = make_sequences("translating_rotor", [0, 1, 2])
        cfg = toy_arch(seed=6)
        params = build_params(cfg, zero_head=False)
        serial = evaluate(params, cfg, seqs, threads=1)
        pooled = evaluate(params, cfg, seqs, threads=3)
        assert serial.aggregate == pooled.aggregate
        rows_s = [(fm.sequence_id, fm.frame, fm.report.cd) for fm in serial.frames]
        rows_p = [(fm.sequence_id, fm.frame, fm.report.cd) for fm in pooled.frames]
        assert rows_s == rows_p

    def test_thread_count_from_environment(self, monkeypatch):
        from pchier.training import default_threads
        monkeypatch.delenv("PCHIER_THREADS", raising=False)
        assert default_threads() == 1
        monkeypatch.setenv("PCHIER_THREADS", "3")
        assert default_threads() == 3
        monkeypatch.setenv("PCHIER_THREADS", "not-a-number")
        assert default_threads() == 1


class TestCopyLastBaseline:
    def test_static_sequence_all_zero(self):
        frame = np.random.default_rng(7).normal(size=(12, 3))
        static = PointCloudSequence(frames=[frame.copy() for _ in range(4)])
        rows = copy_last_baseline(static)
        assert rows
        for fm in rows:
            assert fm.report.cd == 0.0
            assert fm.report.emd == 0.0
            assert fm.report.cd_top5 == 0.0

    def test_rigid_translation_emd_is_speed_squared(self):
        # For displacements far below the point spacing the identity
        # matching is optimal, so EMD equals |v|^2 exactly.
        preset = MotionPreset("rigid_translation", velocity=(0.02, 0, 0), seed=8)
        seq = generate_sequence(preset, n_points=12, n_frames=4)
        rows = copy_last_baseline(seq)
        for fm in rows:
            assert fm.report.emd == pytest.approx(0.02 ** 2, abs=1e-15)

    def test_parameter_free_determinism(self):
        seq = make_sequences("articulated_walker", [9])[0]
        a = copy_last_baseline(seq)
        b = copy_last_baseline(seq)
        assert [(fm.frame, fm.report.cd, fm.report.emd) for fm in a] == \
               [(fm.frame, fm.report.cd, fm.report.emd) for fm in b]


class TestMetricsCsv:
    def test_layout(self, tmp_path):
        seqs = make_sequences("rigid_translation", [0, 1], n_frames=4)
        cfg = toy_arch()
        params = build_params(cfg)
        result = evaluate(params, cfg, seqs)
        baseline = baseline_aggregate(seqs)
        path = tmp_path / "metrics.csv"
        write_metrics_csv(result, baseline, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "sequence_id,frame,cd,emd,cd_top5"
        assert sum(1 for l in lines if l.startswith("aggregate,mean")) == 1
        assert lines[-1].startswith("copy_last_input,mean")
        # Zero-head model row must equal the baseline row.
        model_row = [l for l in lines if l.startswith("aggregate,mean")][0]
        assert model_row.split(",")[2:] == lines[-1].split(",")[2:]
