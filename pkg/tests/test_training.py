"""Windowing, the SGD loop, early stopping, and the sweep machinery."""

import numpy as np
import pytest

from emupipe import (
    ClusterData,
    GridSpec,
    NetworkSpec,
    TrainingConfig,
    derive_seed,
    extract_clusters,
    grid_sweep,
    initialise,
    leaderboard,
    make_windows,
    prepare_cluster,
    train,
)
from emupipe.errors import DivergedLoss, NoTrainingData, RunTooShort
from emupipe.training import RunMatrix, mse_of, stack_windows, write_training_log

from conftest import make_run


def toy_matrix(run_id="m", n=60, seed=80, n_features=5, start="1970-01-01"):
    rng = np.random.default_rng(seed)
    dates = np.datetime64(start, "D") + np.arange(n)
    return RunMatrix(run_id, dates, rng.normal(size=(n, n_features)),
                     rng.normal(size=(n, 4)))


def linear_problem(seed=81, n=120):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.1, 1.0, size=(n, 3))
    w = np.array([[1.0, -0.5, 2.0], [0.3, 0.8, -1.2], [0.0, 1.5, 0.4],
                  [-0.7, 0.2, 0.9]])
    y = x @ w.T + np.array([0.5, -0.2, 1.0, 0.1])
    return x, y


class TestDeriveSeed:
    def test_deterministic_and_distinct(self):
        assert derive_seed(3, "init") == derive_seed(3, "init")
        assert derive_seed(3, "init") != derive_seed(3, "shuffle")
        assert derive_seed(3, "init") != derive_seed(4, "init")
        assert derive_seed(3, "cell", 0) != derive_seed(3, "cell", 1)

    def test_fits_in_63_bits(self):
        for base in range(20):
            assert 0 <= derive_seed(base, "x") < 1 << 63


class TestTrainingConfig:
    def test_round_trip(self):
        config = TrainingConfig(lag_days=7, learning_rate=0.05, momentum=0.5,
                                lr_decay=0.9, dtype="float32")
        assert TrainingConfig.from_dict(config.to_dict()) == config

    def test_zero_learning_rate_allowed(self):
        TrainingConfig(learning_rate=0.0)

    @pytest.mark.parametrize("kwargs", [
        {"learning_rate": -0.1}, {"momentum": 1.0}, {"momentum": -0.1},
        {"lr_decay": 0.0}, {"lr_decay": 1.1}, {"dtype": "float16"},
        {"lag_days": 0}, {"batch_size": 0}, {"patience": 0}, {"min_delta": -1.0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            TrainingConfig(**kwargs)


class TestWindows:
    def test_count_alignment_and_views(self):
        m = toy_matrix(n=30)
        samples = make_windows([m], lag=7)
        assert len(samples) == 30 - 7 + 1
        s = samples[5]   # final day index 11
        np.testing.assert_array_equal(s.inputs, m.x[5:12])
        np.testing.assert_array_equal(s.target, m.y[11])
        assert s.date == m.dates[11]
        assert s.run_id == "m"

    def test_windows_stay_inside_date_range(self):
        m = toy_matrix(n=60, start="1970-01-01")
        samples = make_windows([m], lag=10, date_range=("1970-01-21", "1970-02-10"))
        # restricted slice has 21 days -> 12 windows, first ends at day 30
        assert len(samples) == 12
        assert samples[0].date == np.datetime64("1970-01-30")
        assert samples[-1].date == np.datetime64("1970-02-10")

    def test_pools_runs_in_order(self):
        a, b = toy_matrix("a", n=12, seed=1), toy_matrix("b", n=15, seed=2)
        samples = make_windows([a, b], lag=12)
        assert [s.run_id for s in samples] == ["a"] + ["b"] * 4

    def test_too_short_run_is_an_error(self):
        with pytest.raises(RunTooShort):
            make_windows([toy_matrix(n=5)], lag=6)

    def test_stack_shapes(self):
        samples = make_windows([toy_matrix(n=20)], lag=4)
        xr, yr = stack_windows(samples, recurrent=True)
        xf, yf = stack_windows(samples, recurrent=False, dtype=np.float32)
        assert xr.shape == (17, 4, 5) and yr.shape == (17, 4)
        assert xf.shape == (17, 20) and xf.dtype == np.float32
        np.testing.assert_allclose(xf[3], xr[3].reshape(-1), rtol=1e-6)

    def test_stack_empty_rejected(self):
        with pytest.raises(NoTrainingData):
            stack_windows([], recurrent=False)


class TestMseOf:
    def test_matches_direct_formula_across_chunks(self):
        net = initialise(NetworkSpec("FFNN", input_dim=5, output_dim=4), seed=9)
        rng = np.random.default_rng(10)
        x, y = rng.normal(size=(11, 5)), rng.normal(size=(11, 4))
        direct = float(np.mean((net.predict(x) - y) ** 2))
        assert mse_of(net, x, y, chunk=3) == pytest.approx(direct, rel=1e-12)


class TestTrain:
    def test_fits_a_linear_map_to_machine_precision(self):
        x, y = linear_problem()
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4,
                           ff_layers=1, ff_start_width=16)
        config = TrainingConfig(lag_days=1, batch_size=16, learning_rate=0.1,
                                momentum=0.9, max_epochs=600, patience=600,
                                min_delta=0.0, seed=5)
        model = train((x, y), (x, y), spec, config)
        assert model.best_val_mse < 1e-12

    def test_deterministic_for_fixed_config(self):
        x, y = linear_problem(seed=82)
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        config = TrainingConfig(learning_rate=0.05, max_epochs=5, patience=5, seed=3)
        a = train((x, y), (x, y), spec, config)
        b = train((x, y), (x, y), spec, config)
        assert a.log == b.log
        for (_, pa), (_, pb) in zip(a.network.parameters(), b.network.parameters()):
            np.testing.assert_array_equal(pa, pb)

    def test_seed_changes_the_outcome(self):
        x, y = linear_problem(seed=83)
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        a = train((x, y), (x, y), spec,
                  TrainingConfig(learning_rate=0.05, max_epochs=3, patience=3, seed=1))
        b = train((x, y), (x, y), spec,
                  TrainingConfig(learning_rate=0.05, max_epochs=3, patience=3, seed=2))
        assert a.log != b.log

    def test_zero_learning_rate_freezes_initialisation(self):
        x, y = linear_problem(seed=84)
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        config = TrainingConfig(learning_rate=0.0, max_epochs=4, patience=4, seed=6)
        model = train((x, y), (x, y), spec, config)
        frozen = initialise(spec, derive_seed(6, "init"))
        for (_, pa), (_, pb) in zip(model.network.parameters(), frozen.parameters()):
            np.testing.assert_array_equal(pa, pb)
        assert len({r["val_mse"] for r in model.log}) == 1

    def test_early_stopping_patience(self):
        x, y = linear_problem(seed=85)
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        config = TrainingConfig(learning_rate=0.05, max_epochs=50, patience=4,
                                min_delta=1e9, seed=7)
        model = train((x, y), (x, y), spec, config)
        # epoch 1 sets the best; nothing can beat it by min_delta afterwards
        assert model.best_epoch == 1
        assert len(model.log) == 1 + config.patience

    def test_returned_weights_are_the_best_epoch(self):
        x, y = linear_problem(seed=86)
        rng = np.random.default_rng(87)
        xv, yv = x + 0.05 * rng.normal(size=x.shape), y
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        config = TrainingConfig(learning_rate=0.1, momentum=0.8, max_epochs=40,
                                patience=40, min_delta=0.0, seed=8)
        model = train((x, y), (xv, yv), spec, config)
        recomputed = mse_of(model.network, xv.astype(np.float64), yv)
        assert recomputed == pytest.approx(model.best_val_mse, rel=1e-12)
        assert model.best_val_mse == pytest.approx(
            min(r["val_mse"] for r in model.log), rel=1e-12)

    def test_learning_rate_decay_schedule(self):
        x, y = linear_problem(seed=88)
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        config = TrainingConfig(learning_rate=0.1, lr_decay=0.5, max_epochs=4,
                                patience=4, seed=9)
        model = train((x, y), (x, y), spec, config)
        assert [r["lr"] for r in model.log] == [0.1, 0.05, 0.025, 0.0125]

    def test_divergence_is_reported(self):
        x, y = linear_problem(seed=89)
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        config = TrainingConfig(learning_rate=100.0, max_epochs=30, patience=30,
                                seed=10, dtype="float32")
        with pytest.raises(DivergedLoss):
            train((x, y), (x, y), spec, config)

    def test_empty_data_rejected(self):
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        config = TrainingConfig()
        x, y = linear_problem(seed=90)
        with pytest.raises(NoTrainingData):
            train((np.zeros((0, 3)), np.zeros((0, 4))), (x, y), spec, config)
        with pytest.raises(NoTrainingData):
            train((x, y), (np.zeros((0, 3)), np.zeros((0, 4))), spec, config)

    def test_sample_lists_and_arrays_agree(self):
        m = toy_matrix(n=40, seed=91)
        samples = make_windows([m], lag=5)
        spec = NetworkSpec("GRU-FFNN", input_dim=5, output_dim=4,
                           recurrent_layers=1, recurrent_width=6)
        config = TrainingConfig(lag_days=5, learning_rate=0.05, max_epochs=3,
                                patience=3, seed=11)
        a = train(samples, samples, spec, config)
        arrays = stack_windows(samples, recurrent=True)
        b = train(arrays, arrays, spec, config)
        assert a.log == b.log

    def test_training_log_file(self, tmp_path):
        x, y = linear_problem(seed=92)
        spec = NetworkSpec("FFNN", input_dim=3, output_dim=4)
        model = train((x, y), (x, y), spec,
                      TrainingConfig(learning_rate=0.05, max_epochs=3, patience=3))
        path = tmp_path / "log.csv"
        write_training_log(model.log, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_mse,val_mse"
        assert len(lines) == 1 + len(model.log)
        assert float(lines[1].split(",")[1]) == model.log[0]["train_mse"]


class TestClusterData:
    @pytest.fixture()
    def cluster_setup(self, short_split):
        runs = [make_run(f"r{i}", n_days=6 * 365, seed=93 + i, start="1970-01-01")
                for i in range(2)]
        return runs, ClusterData(runs, split=short_split)

    def test_scalers_fit_training_rows_only(self, cluster_setup, short_split):
        runs, data = cluster_setup
        lo, hi = short_split.range_for("train")
        for matrix in data.matrices:
            mask = (matrix.dates >= np.datetime64(lo)) & (matrix.dates <= np.datetime64(hi))
            pooled = np.concatenate([m.y[(m.dates >= np.datetime64(lo))
                                         & (m.dates <= np.datetime64(hi))]
                                     for m in data.matrices])
            assert pooled.min() == 0.0 and pooled.max() == 1.0
            # outside the training window values may leave the unit interval
            assert matrix.y[~mask].max() > 1.0 or matrix.y[~mask].min() < 0.0

    def test_later_rows_never_move_the_scalers(self, short_split):
        runs = [make_run("r", n_days=6 * 365, seed=95, start="1970-01-01")]
        base = ClusterData(runs, split=short_split)
        poked = make_run("r", n_days=6 * 365, seed=95, start="1970-01-01")
        outputs = {k: v.copy() for k, v in poked.outputs.items()}
        cut = int(np.where(poked.dates == np.datetime64("1974-01-01"))[0][0])
        outputs["runoff"][cut:] *= 1000.0
        object.__setattr__(poked, "outputs", outputs)
        again = ClusterData([poked], split=short_split)
        assert again.target_scaler.equals(base.target_scaler)
        assert again.feature_scaler.equals(base.feature_scaler)

    def test_window_cache_reused(self, cluster_setup):
        _, data = cluster_setup
        assert data.windows(7, "train") is data.windows(7, "train")

    def test_prepare_cluster_selects_members(self, short_split, archive):
        clusters = extract_clusters(archive, 0.95, split=short_split)
        cluster = next(c for c in clusters if len(c.run_ids) > 1)
        data = prepare_cluster(archive, cluster, split=short_split)
        assert data.run_ids == tuple(sorted(cluster.run_ids))
        assert data.cluster_id == cluster.cluster_id

    def test_prepare_cluster_missing_run(self, short_split, archive):
        clusters = extract_clusters(archive, 0.95, split=short_split)
        cluster = clusters[0]
        remaining = [r for r in archive if r.run_id not in cluster.run_ids]
        with pytest.raises(NoTrainingData):
            prepare_cluster(remaining, cluster, split=short_split)

    def test_restricted_matrix(self):
        m = toy_matrix(n=31, start="1990-01-01")
        r = m.restricted(("1990-01-10", "1990-01-19"))
        assert len(r.dates) == 10
        np.testing.assert_array_equal(r.x, m.x[9:19])


class TestGridSweep:
    def test_cell_enumeration(self):
        grid = GridSpec(architectures=("FFNN",), lags=(7, 14),
                        n_layers=(1, 3), ff_start_widths=(8, 16, 32))
        cells = grid.cells(n_features=34)
        assert len(cells) == 2 * 2 * 3
        spec, lag = cells[0]
        assert spec.input_dim == 7 * 34 and lag == 7

    def test_recurrent_cells_fix_the_head(self):
        grid = GridSpec(architectures=("GRU-FFNN",), lags=(7,),
                        n_layers=(2,), recurrent_widths=(8,),
                        head_layers=1, head_width=16)
        (spec, _), = grid.cells(n_features=10)
        assert spec.input_dim == 10
        assert spec.recurrent_layers == 2 and spec.recurrent_width == 8
        assert spec.ff_layers == 1 and spec.ff_start_width == 16

    def test_round_trip_and_unknown_keys(self):
        grid = GridSpec(lags=(7,), n_layers=(1,))
        assert GridSpec.from_dict(grid.to_dict()) == grid
        with pytest.raises(ValueError, match="unknown grid keys"):
            GridSpec.from_dict({"lags": [7], "depth": [1]})

    def test_sweep_ranks_and_records_failures(self, short_split):
        runs = [make_run("r", n_days=6 * 365, seed=96, start="1970-01-01")]
        data = ClusterData(runs, split=short_split)
        grid = GridSpec(architectures=("FFNN",), lags=(5, 400),
                        n_layers=(1,), ff_start_widths=(8,))
        config = TrainingConfig(learning_rate=0.05, max_epochs=2, patience=2, seed=12)
        results = grid_sweep(data, grid, config)
        assert len(results) == 2
        ok, bad = results
        assert ok.error is None and "test_mse" in ok.metrics
        assert ok.model is None                   # keep_models defaults off
        assert bad.error is not None              # lag 400 exceeds the val slice
        rows = leaderboard(results)
        assert rows[0]["rank"] == 1 and rows[1]["rank"] is None

    def test_sweep_keeps_models_on_request(self, short_split):
        runs = [make_run("r", n_days=6 * 365, seed=97, start="1970-01-01")]
        data = ClusterData(runs, split=short_split)
        grid = GridSpec(architectures=("FFNN",), lags=(5,),
                        n_layers=(1,), ff_start_widths=(8,))
        config = TrainingConfig(learning_rate=0.05, max_epochs=2, patience=2, seed=13)
        result, = grid_sweep(data, grid, config, keep_models=True)
        assert result.model is not None
        assert result.metrics["val_mse"] == result.model.best_val_mse
