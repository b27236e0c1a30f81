"""Dataset assembly, splitting, metrics, training loop and selection."""

import math
import warnings

import numpy as np
import pytest

from inertialab.grid import Branch, Bus, GeneratorParams, GridModel
from inertialab.experiments import (
    DatasetBuilder,
    DatasetSpec,
    Metrics,
    SubsetScorer,
    TrainReport,
    TrainingDivergedError,
    default_h_grid,
    desk_amplitude_grid,
    evaluate,
    exhaustive_subset_scores,
    generate_dataset,
    metrics_from_predictions,
    narrow_amplitude_grid,
    paper_amplitude_grid,
    predict,
    split,
    train,
    wrapper_feature_selection,
)
from inertialab.nn.model import LrcnConfig
from inertialab.signals import Dataset, FeatureSet, NormalizationStats

OMEGA = 2.0 * math.pi * 60.0


def toy_dataset(n=40, length=12, seed=0, labels=None):
    rng = np.random.default_rng(seed)
    tensors = rng.uniform(0.0, 1.0, size=(n, length))
    if labels is None:
        labels = rng.uniform(3.0, 8.0, size=n)
    return Dataset(
        tensors=tensors,
        labels=np.asarray(labels, dtype=float),
        features=FeatureSet(["speed"]),
        window=(0.0, 1.0),
        snr_db=60.0,
        n_buses=2,
        stats=NormalizationStats(minima=np.zeros(2), maxima=np.ones(2)),
    )


def tiny_grid():
    gens = (
        GeneratorParams("a", 1, 2 * 4.0 * 100 / OMEGA**2, 100.0, OMEGA, 1.0),
        GeneratorParams("b", 2, 2 * 3.5 * 100 / OMEGA**2, 100.0, OMEGA, 1.0),
    )
    return GridModel(
        buses=(Bus(1, "generator", 20.0), Bus(2, "generator", 0.0), Bus(3, "load", 30.0)),
        branches=(Branch(1, 3, 2.0), Branch(2, 3, 3.0), Branch(1, 2, 1.0)),
        generators=gens,
        system_base=200.0,
        monitored_buses=(1, 2),
    )


class TestGrids:
    def test_h_grid(self):
        grid = default_h_grid()
        assert len(grid) == 11
        assert grid[0] == 3.0 and grid[-1] == 8.0

    def test_amplitude_grids(self):
        paper = paper_amplitude_grid()
        assert len(paper) == 100
        assert paper[0] == pytest.approx(0.0001)
        assert paper[-1] == pytest.approx(0.01)
        assert len(narrow_amplitude_grid()) == 91
        assert len(desk_amplitude_grid()) == 20

    def test_spec_sample_count(self):
        assert DatasetSpec().n_samples == 1100


class TestSplit:
    def test_paper_sizes(self):
        ds = toy_dataset(n=1100)
        train_set, val_set = split(ds, 0.8, seed=0)
        assert len(train_set) == 880
        assert len(val_set) == 220

    def test_even_split(self):
        ds = toy_dataset(n=10)
        a, b = split(ds, 0.5, seed=1)
        assert len(a) == 5 and len(b) == 5

    def test_seed_reproducible(self):
        ds = toy_dataset(n=30)
        a1, b1 = split(ds, 0.8, seed=3)
        a2, b2 = split(ds, 0.8, seed=3)
        np.testing.assert_array_equal(a1.labels, a2.labels)
        np.testing.assert_array_equal(b1.tensors, b2.tensors)

    def test_partition_is_exact(self):
        ds = toy_dataset(n=23)
        a, b = split(ds, 0.8, seed=5)
        merged = np.concatenate([a.labels, b.labels])
        np.testing.assert_array_equal(np.sort(merged), np.sort(ds.labels))
        assert len(a) + len(b) == len(ds)

    def test_domain(self):
        with pytest.raises(ValueError):
            split(toy_dataset(n=10), 1.5, seed=0)
        with pytest.raises(ValueError):
            split(toy_dataset(n=1), 0.5, seed=0)


class TestMetrics:
    def test_perfect_predictions(self):
        m = metrics_from_predictions([3.0, 5.0, 7.0], [3.0, 5.0, 7.0])
        assert m == Metrics(mse=0.0, r2=1.0, acc10=1.0)

    def test_mean_prediction_zero_r2(self):
        labels = np.array([2.0, 4.0, 6.0])
        m = metrics_from_predictions(labels, np.full(3, labels.mean()))
        assert m.r2 == pytest.approx(0.0, abs=1e-15)

    def test_hand_example(self):
        m = metrics_from_predictions([4.0, 8.0], [4.2, 9.0])
        assert m.acc10 == 0.5  # 0.2/4 = 5% in, 1.0/8 = 12.5% out
        assert m.mse == pytest.approx((0.04 + 1.0) / 2, rel=1e-12)
        assert m.r2 == pytest.approx(1.0 - 1.04 / 8.0, rel=1e-12)

    def test_boundary_inclusive(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # single label: r2 sentinel expected
            m = metrics_from_predictions([10.0], [11.0])
            assert m.acc10 == 1.0
            m = metrics_from_predictions([10.0], [11.0000001])
            assert m.acc10 == 0.0

    def test_constant_labels_sentinel(self):
        with pytest.warns(UserWarning, match="constant labels"):
            m = metrics_from_predictions([4.0, 4.0], [4.1, 3.9])
        assert math.isnan(m.r2)


class TestTrainLoop:
    def small_config(self, length, **kw):
        base = dict(
            input_len=length,
            conv1_channels=2,
            conv2_channels=3,
            lstm_units=4,
            head_sizes=(6, 3),
            batch_size=8,
            seed=0,
            sequence_stride=4,
            learning_rate=0.02,
        )
        base.update(kw)
        return LrcnConfig(**base)

    def linear_toy(self, n=96, length=60, seed=3):
        """Labels are an affine function of the tensors: exactly learnable."""
        rng = np.random.default_rng(seed)
        tensors = rng.uniform(0.0, 1.0, size=(n, length))
        weights = rng.uniform(-1.0, 1.0, size=length)
        labels = 4.0 + tensors @ weights / length
        return toy_dataset(n=n, length=length, seed=seed, labels=labels), tensors

    def test_zero_epochs_identity(self):
        ds = toy_dataset(n=20, length=24)
        cfg = self.small_config(24)
        tr, va = split(ds, 0.8, 0)
        model, report = train(cfg, tr, va, epochs=0, seed=0)
        from inertialab.nn.model import make_model

        fresh = make_model("lrcn", cfg)
        for name in fresh.params:
            np.testing.assert_array_equal(model.params[name], fresh.params[name])
        assert report.train_curve == ()
        assert math.isnan(report.best_val_mse)

    def test_curve_lengths_match_epochs(self):
        ds = toy_dataset(n=20, length=24)
        tr, va = split(ds, 0.8, 0)
        _, report = train(self.small_config(24), tr, va, epochs=3, seed=0)
        assert len(report.train_curve) == 3
        assert len(report.val_curve) == 3
        assert len(report.lr_trace) == 3

    def test_training_is_deterministic(self):
        ds = toy_dataset(n=24, length=24)
        tr, va = split(ds, 0.8, 0)
        _, r1 = train(self.small_config(24), tr, va, epochs=4, seed=9)
        _, r2 = train(self.small_config(24), tr, va, epochs=4, seed=9)
        assert r1.train_curve == r2.train_curve
        assert r1.val_curve == r2.val_curve

    def test_linear_target_convergence(self):
        ds, _ = self.linear_toy()
        tr, va = split(ds, 0.8, 0)
        cfg = self.small_config(60, learning_rate=0.05)
        model, report = train(cfg, tr, va, epochs=200, seed=0)
        assert min(report.val_curve) < 1e-3

    def test_best_checkpoint_retained(self):
        ds = toy_dataset(n=24, length=24)
        tr, va = split(ds, 0.8, 0)
        model, report = train(self.small_config(24), tr, va, epochs=5, seed=1)
        from inertialab.nn import layers

        val_mse = layers.mse(va.labels, predict(model, va))
        assert val_mse == pytest.approx(report.best_val_mse, rel=1e-12)
        assert report.best_val_mse == min(report.val_curve)

    def test_lr_trace_follows_plateau_rule(self):
        ds = toy_dataset(n=24, length=24)
        tr, va = split(ds, 0.8, 0)
        cfg = self.small_config(24, lr_patience=2)
        _, report = train(cfg, tr, va, epochs=8, seed=2)
        from inertialab.nn.schedule import ReduceLrOnPlateau

        sched = ReduceLrOnPlateau(
            lr=cfg.learning_rate, factor=cfg.lr_factor, patience=cfg.lr_patience,
            min_lr=cfg.lr_min, threshold=cfg.lr_threshold,
        )
        replay = tuple(sched.update(v) for v in report.val_curve)
        assert replay == report.lr_trace

    def test_batch_size_precondition(self):
        ds = toy_dataset(n=10, length=24)
        tr, va = split(ds, 0.5, 0)
        with pytest.raises(ValueError):
            train(self.small_config(24, batch_size=16), tr, va, epochs=1, seed=0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_detected(self):
        ds = toy_dataset(n=20, length=24)
        tr, va = split(ds, 0.8, 0)
        cfg = self.small_config(24, learning_rate=1e9)
        with pytest.raises(TrainingDivergedError):
            train(cfg, tr, va, epochs=10, seed=0)

    def test_report_round_trip(self, tmp_path):
        ds = toy_dataset(n=20, length=24)
        tr, va = split(ds, 0.8, 0)
        _, report = train(self.small_config(24), tr, va, epochs=3, seed=0)
        path = tmp_path / "report.txt"
        report.save(path)
        back = TrainReport.load(path)
        assert back.train_curve == pytest.approx(report.train_curve)
        assert back.val_curve == pytest.approx(report.val_curve)
        assert back.metrics.mse == pytest.approx(report.metrics.mse)
        assert back.best_epoch == report.best_epoch
        assert back.config_fingerprint == report.config_fingerprint


class TestDatasetGeneration:
    def spec(self, **kw):
        base = dict(
            h_values=(3.5,),
            amplitudes=(0.001,),
            window=(0.0, 1.0),
            snr_db=60.0,
            features=FeatureSet(["speed", "rocof"]),
            base_seed=1,
        )
        base.update(kw)
        return DatasetSpec(**base)

    def test_single_cell(self):
        ds = generate_dataset(tiny_grid(), self.spec())
        assert len(ds) == 1
        assert ds.labels[0] == 3.5
        assert ds.tensor_length == 200 * 2 * 2

    def test_grid_product_count(self):
        ds = generate_dataset(tiny_grid(), self.spec(h_values=(3.0, 4.0, 5.0),
                                                     amplitudes=(0.001, 0.002)))
        assert len(ds) == 6
        assert sorted(set(ds.labels.tolist())) == [3.0, 4.0, 5.0]

    def test_normalized_range(self):
        ds = generate_dataset(tiny_grid(), self.spec(h_values=(3.0, 6.0),
                                                     amplitudes=(0.001, 0.005)))
        assert ds.tensors.min() == 0.0
        assert ds.tensors.max() == 1.0

    def test_regeneration_is_byte_identical(self):
        spec = self.spec(h_values=(3.0, 4.5), amplitudes=(0.001, 0.003))
        a = generate_dataset(tiny_grid(), spec).to_bytes()
        b = generate_dataset(tiny_grid(), spec).to_bytes()
        assert a == b

    def test_windows_share_clean_records(self):
        builder = DatasetBuilder(tiny_grid(), self.spec(h_values=(3.0, 5.0),
                                                        amplitudes=(0.002,)))
        ds_a = builder.build(window=(0.0, 1.0))
        ds_b = builder.build(window=(0.5, 1.5))
        assert len(ds_a) == len(ds_b)
        np.testing.assert_array_equal(ds_a.labels, ds_b.labels)
        assert builder.clean_fingerprint() == builder.clean_fingerprint()

    def test_snr_rows_reuse_clean_records(self):
        builder = DatasetBuilder(tiny_grid(), self.spec(h_values=(3.0,),
                                                        amplitudes=(0.002, 0.004)))
        fp_before = builder.clean_fingerprint()
        builder.build(snr_db=60.0)
        builder.build(snr_db=45.0)
        assert builder.clean_fingerprint() == fp_before

    def test_amplitudes_recorded(self):
        ds = generate_dataset(tiny_grid(), self.spec(amplitudes=(0.001, 0.002)))
        np.testing.assert_allclose(sorted(ds.amplitudes), [0.001, 0.002])

    def test_instability_aborts_with_cell_index(self):
        from inertialab.experiments import GenerationError

        spec = self.spec(h_values=(3.0,), amplitudes=(0.001, 50.0))
        with pytest.raises(GenerationError) as err:
            generate_dataset(tiny_grid(), spec)
        assert err.value.h_index == 0
        assert err.value.amp_index == 1


class TestFeatureSelectionMachinery:
    def test_scorer_memoizes(self):
        builder = DatasetBuilder(
            tiny_grid(),
            DatasetSpec(h_values=(3.0, 5.0, 7.0), amplitudes=(0.002, 0.004),
                        base_seed=0),
        )
        config = LrcnConfig(input_len=3, conv1_channels=2, conv2_channels=2,
                            lstm_units=3, head_sizes=(4, 2), batch_size=4,
                            seed=0, sequence_stride=8)
        scorer = SubsetScorer(builder, config, epochs=1, split_seed=0, train_seed=0)
        from inertialab.signals import Feature

        first = scorer.score((Feature.SPEED,))
        again = scorer.score((Feature.SPEED,))
        assert first == again
        assert len(scorer._memo) == 1

    def test_single_candidate_selected_over_empty_baseline(self):
        builder = DatasetBuilder(
            tiny_grid(),
            DatasetSpec(h_values=(3.0, 5.0, 7.0), amplitudes=(0.002, 0.004),
                        base_seed=0),
        )
        config = LrcnConfig(input_len=3, conv1_channels=2, conv2_channels=2,
                            lstm_units=3, head_sizes=(4, 2), batch_size=4,
                            seed=0, sequence_stride=8)
        from inertialab.signals import Feature

        result = wrapper_feature_selection(
            builder, config, epochs=1, candidates=[Feature.ROCOF]
        )
        assert result.selected.members == (Feature.ROCOF,)

    def test_greedy_path_is_non_decreasing(self):
        builder = DatasetBuilder(
            tiny_grid(),
            DatasetSpec(h_values=(3.0, 5.0, 7.0), amplitudes=(0.002, 0.004, 0.006),
                        base_seed=0),
        )
        config = LrcnConfig(input_len=3, conv1_channels=2, conv2_channels=2,
                            lstm_units=3, head_sizes=(4, 2), batch_size=4,
                            seed=0, sequence_stride=8)
        scorer = SubsetScorer(builder, config, epochs=2, split_seed=0, train_seed=0)
        result = wrapper_feature_selection(builder, config, epochs=2, scorer=scorer)
        scores = [max(r.values()) for r in result.rounds if r]
        picked = [s for s in scores]
        assert all(b >= a for a, b in zip(picked, picked[1:])) or len(picked) <= 1
        exhaustive = exhaustive_subset_scores(builder, config, epochs=2, scorer=scorer)
        assert frozenset(result.selected) in exhaustive
