"""Window assembly, mini-batch SGD with early stopping, and grid sweeps.

Supervised samples are sliding windows over a run's (scaled) feature and
target tables: one sample per day that has a full lag window behind it, the
target being the four scaled outputs on the window's final day.  Windows
never straddle a split boundary because they are cut from rows of a single
split.  Recurrent networks consume the window as a sequence and reset state
to zero at its start; feed-forward networks consume the flattened window.

Training is plain mini-batch SGD by default (momentum and per-epoch learning
rate decay are available by config), with per-epoch seeded shuffling,
validation after every epoch, patience-based early stopping, and restoration
of the best-validation-epoch weights.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace

import numpy as np

from .dataset import OUTPUT_VARIABLES, SplitSpec
from .errors import (DivergedLoss, EmptyGrid, EmulationError, LengthMismatch,
                     NoTrainingData, RunTooShort)
from .features import FeatureSpec, derive_features
from .nn import Network, NetworkSpec, initialise
from .scaling import ColumnScaler, fit_scaler

logger = logging.getLogger(__name__)

N_OUTPUTS = 4


def derive_seed(base: int, *parts) -> int:
    """Independent 63-bit stream seed for a named sub-purpose of a base seed."""
    text = repr((int(base),) + tuple(str(p) for p in parts))
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class TrainingConfig:
    lag_days: int = 14
    batch_size: int = 128
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 10          # epochs without val improvement before stopping
    min_delta: float = 1e-5     # required val MSE improvement to reset patience
    seed: int = 0
    momentum: float = 0.0       # 0 = plain SGD
    lr_decay: float = 1.0       # multiplier applied to lr after each epoch
    dtype: str = "float64"      # "float32" trades gradcheck-grade precision for speed

    def __post_init__(self):
        if self.lag_days < 1:
            raise ValueError("lag_days must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}  # type: ignore[attr-defined]

    @classmethod
    def from_dict(cls, data: dict) -> "TrainingConfig":
        return cls(**data)


@dataclass
class RunMatrix:
    """One run's aligned, already-scaled feature rows and target rows."""

    run_id: str
    dates: np.ndarray           # datetime64[D], contiguous
    x: np.ndarray               # (n_days, n_features)
    y: np.ndarray               # (n_days, 4)

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if not (len(self.dates) == len(self.x) == len(self.y)):
            raise LengthMismatch(len(self.dates), len(self.x))
        if self.y.ndim != 2 or self.y.shape[1] != N_OUTPUTS:
            raise ValueError(f"targets must be (n, {N_OUTPUTS}), got {self.y.shape}")

    def restricted(self, date_range) -> "RunMatrix":
        lo, hi = (np.datetime64(d, "D") for d in date_range)
        mask = (self.dates >= lo) & (self.dates <= hi)
        return RunMatrix(self.run_id, self.dates[mask], self.x[mask], self.y[mask])


class ClusterData:
    """Scaled feature/target tables for one cluster's runs, window-ready.

    Features are derived over each full run (they are causal, so later rows
    never contaminate earlier ones), but both scalers are fitted exclusively
    on rows inside the training date range, pooled across the cluster's
    runs.  Validation and test rows are transformed with those frozen
    parameters and never touch the fit.
    """

    def __init__(self, runs, feature_spec: FeatureSpec | None = None,
                 split: SplitSpec | None = None,
                 feature_scaler: ColumnScaler | None = None,
                 target_scaler: ColumnScaler | None = None,
                 cluster_id: str | None = None,
                 threshold: float | None = None):
        runs = sorted(runs, key=lambda r: r.run_id)
        if not runs:
            raise NoTrainingData("cluster with no runs")
        self.feature_spec = feature_spec or FeatureSpec()
        self.split = split or SplitSpec.default()
        self.cluster_id = cluster_id
        self.threshold = threshold

        tables = [derive_features(run, self.feature_spec) for run in runs]
        self.feature_names = tables[0].names
        for run, table in zip(runs, tables):
            if table.names != self.feature_names:
                raise ValueError(f"run {run.run_id!r} produced a different feature set")
        raw_targets = [np.column_stack([run.outputs[v] for v in OUTPUT_VARIABLES])
                       for run in runs]

        if feature_scaler is None or target_scaler is None:
            train_range = self.split.range_for("train")
            masks = [table.rows_in(*train_range) for table in tables]
            if not any(mask.any() for mask in masks):
                raise NoTrainingData("no rows inside the training date range")
            pooled_x = np.concatenate([t.values[m] for t, m in zip(tables, masks)])
            pooled_y = np.concatenate([y[m] for y, m in zip(raw_targets, masks)])
            feature_scaler = feature_scaler or fit_scaler(pooled_x, self.feature_names)
            target_scaler = target_scaler or fit_scaler(pooled_y, OUTPUT_VARIABLES)
        self.feature_scaler = feature_scaler
        self.target_scaler = target_scaler

        self.matrices = [RunMatrix(run.run_id, run.dates,
                                   feature_scaler.transform(table.values),
                                   target_scaler.transform(targets))
                         for run, table, targets in zip(runs, tables, raw_targets)]
        self.run_ids = tuple(run.run_id for run in runs)
        self._window_cache: dict[tuple[int, str], list[WindowSample]] = {}

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def windows(self, lag: int, which: str) -> "list[WindowSample]":
        key = (lag, which)
        if key not in self._window_cache:
            self._window_cache[key] = make_windows(
                self.matrices, lag, self.split.range_for(which))
        return self._window_cache[key]


def prepare_cluster(runs, cluster=None, feature_spec: FeatureSpec | None = None,
                    split: SplitSpec | None = None,
                    feature_scaler: ColumnScaler | None = None,
                    target_scaler: ColumnScaler | None = None) -> ClusterData:
    """ClusterData for the given runs, or for the subset named by a cluster."""
    if cluster is not None:
        by_id = {run.run_id: run for run in runs}
        missing = [rid for rid in cluster.run_ids if rid not in by_id]
        if missing:
            raise NoTrainingData(f"cluster runs not loaded: {missing}")
        runs = [by_id[rid] for rid in cluster.run_ids]
        return ClusterData(runs, feature_spec, split, feature_scaler,
                           target_scaler, cluster_id=cluster.cluster_id,
                           threshold=cluster.threshold)
    return ClusterData(runs, feature_spec, split, feature_scaler, target_scaler)


@dataclass
class WindowSample:
    """One supervised sample: a lag window of features and its final-day target."""

    inputs: np.ndarray          # (lag, n_features) view into the run's rows
    target: np.ndarray          # (4,) scaled outputs at the window's final day
    run_id: str
    date: np.datetime64         # final day of the window

    @property
    def flat_inputs(self) -> np.ndarray:
        return np.asarray(self.inputs).reshape(-1)


def make_windows(matrices, lag: int, date_range=None) -> list[WindowSample]:
    """All full-lag windows from every run, pooled in run order.

    With ``date_range`` the rows are first restricted to that (closed) date
    interval, so no window crosses out of it.  A run slice shorter than the
    lag cannot produce a window and is an error rather than silence.
    """
    if lag < 1:
        raise ValueError("lag must be >= 1")
    samples: list[WindowSample] = []
    for matrix in matrices:
        sliced = matrix.restricted(date_range) if date_range is not None else matrix
        n = len(sliced.dates)
        if n < lag:
            raise RunTooShort(matrix.run_id)
        for t in range(lag - 1, n):
            samples.append(WindowSample(
                inputs=sliced.x[t - lag + 1:t + 1],
                target=sliced.y[t],
                run_id=matrix.run_id,
                date=sliced.dates[t]))
    return samples


def stack_windows(samples, recurrent: bool, dtype=np.float64):
    """Samples -> (X, Y) arrays; X is (n, lag, f) or its flattened (n, lag*f)."""
    if not samples:
        raise NoTrainingData("stack_windows")
    x = np.stack([s.inputs for s in samples]).astype(dtype, copy=False)
    y = np.stack([s.target for s in samples]).astype(dtype, copy=False)
    if not recurrent:
        x = x.reshape(len(samples), -1)
    return x, y


def _as_arrays(data, recurrent: bool, dtype):
    if isinstance(data, tuple):
        x, y = data
        return np.asarray(x, dtype=dtype), np.asarray(y, dtype=dtype)
    return stack_windows(data, recurrent, dtype)


def mse_of(net: Network, x: np.ndarray, y: np.ndarray, chunk: int = 4096) -> float:
    """Mean squared error over all samples and outputs, computed in chunks."""
    total = 0.0
    for lo in range(0, len(x), chunk):
        pred = net.predict(x[lo:lo + chunk])
        diff = pred - y[lo:lo + chunk]
        total += float(np.dot(diff.ravel(), diff.ravel()))
    return total / y.size


@dataclass
class TrainedModel:
    """A network plus everything needed to use it on raw runs later."""

    spec: NetworkSpec
    network: Network
    config: TrainingConfig
    log: list[dict]             # per epoch: epoch, train_mse, val_mse, lr
    best_epoch: int             # 1-based epoch whose weights are returned
    best_val_mse: float
    feature_names: tuple[str, ...] | None = None
    feature_scaler: object | None = None        # ColumnScaler
    target_scaler: object | None = None         # ColumnScaler
    cluster_id: str | None = None
    run_ids: tuple[str, ...] = ()

    def predict(self, x) -> np.ndarray:
        return self.network.predict(x)


def write_training_log(log, path):
    with open(path, "w", newline="") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for record in log:
            fh.write(f"{record['epoch']},{record['train_mse']!r},{record['val_mse']!r}\n")


def train(train_data, val_data, spec: NetworkSpec,
          config: TrainingConfig) -> TrainedModel:
    """Mini-batch SGD with early stopping on validation MSE.

    ``train_data``/``val_data`` are WindowSample lists or pre-stacked (x, y)
    tuples.  Stops once validation MSE has not improved by at least
    ``min_delta`` for ``patience`` consecutive epochs, or at ``max_epochs``;
    the returned weights are those of the best validation epoch.  Fully
    deterministic for a fixed config.
    """
    dtype = np.dtype(config.dtype)
    recurrent = spec.is_recurrent
    x_train, y_train = _as_arrays(train_data, recurrent, dtype)
    x_val, y_val = _as_arrays(val_data, recurrent, dtype)
    if len(x_train) == 0:
        raise NoTrainingData("train")
    if len(x_val) == 0:
        raise NoTrainingData("validation")

    net = initialise(spec, derive_seed(config.seed, "init"), dtype=dtype)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    params = [array for _, array in net.parameters()]
    velocity = ([np.zeros_like(p) for p in params] if config.momentum > 0 else None)

    n = len(x_train)
    lr = config.learning_rate
    best_val = np.inf
    best_epoch = 0
    best_params = [p.copy() for p in params]
    since_improvement = 0
    log: list[dict] = []

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        squared_error_sum = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            xb = x_train[idx]
            yb = y_train[idx]
            pred, cache = net.forward(xb)
            diff = pred - yb
            squared_error_sum += float(np.dot(diff.ravel(), diff.ravel()))
            grads = net.backward(2.0 * diff / diff.size, cache)
            if velocity is None:
                for p, g in zip(params, grads):
                    p -= lr * g
            else:
                for p, g, v in zip(params, grads, velocity):
                    v *= config.momentum
                    v += g
                    p -= lr * v
        train_mse = squared_error_sum / y_train.size
        val_mse = mse_of(net, x_val, y_val)
        log.append({"epoch": epoch, "train_mse": train_mse,
                    "val_mse": val_mse, "lr": lr})
        if not (np.isfinite(train_mse) and np.isfinite(val_mse)):
            raise DivergedLoss(epoch)
        if val_mse < best_val - config.min_delta:
            best_val = val_mse
            best_epoch = epoch
            for stored, p in zip(best_params, params):
                stored[...] = p
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= config.patience:
                logger.info("early stop at epoch %d (best %d, val %.6g)",
                            epoch, best_epoch, best_val)
                break
        lr *= config.lr_decay

    net.set_parameters(best_params)
    return TrainedModel(spec=spec, network=net, config=config, log=log,
                        best_epoch=best_epoch, best_val_mse=float(best_val))


@dataclass(frozen=True)
class GridSpec:
    """Axes of the architecture/lag sweep.

    Feed-forward cells vary (depth, start width); recurrent cells vary
    (depth, state width) with a fixed small feed-forward head on top.
    """

    architectures: tuple[str, ...] = ("FFNN", "GRU-FFNN")
    lags: tuple[int, ...] = (7, 14, 28)
    n_layers: tuple[int, ...] = (1, 3, 5, 7, 9)
    recurrent_widths: tuple[int, ...] = (32, 64, 128, 256, 512)
    ff_start_widths: tuple[int, ...] = (32, 64, 128, 256, 512, 1024)
    head_layers: int = 1
    head_width: int = 64
    candidate_reset_mode: str = "standard"

    def architecture_cells(self, n_features: int, lag: int) -> list[NetworkSpec]:
        """Every network spec for one lag (no lag axis applied here)."""
        cells = []
        for architecture in self.architectures:
            if architecture == "FFNN":
                for depth in self.n_layers:
                    for width in self.ff_start_widths:
                        cells.append(NetworkSpec(
                            architecture="FFNN", input_dim=lag * n_features,
                            ff_layers=depth, ff_start_width=width))
            else:
                for depth in self.n_layers:
                    for width in self.recurrent_widths:
                        cells.append(NetworkSpec(
                            architecture="GRU-FFNN", input_dim=n_features,
                            recurrent_layers=depth, recurrent_width=width,
                            ff_layers=self.head_layers,
                            ff_start_width=self.head_width,
                            candidate_reset_mode=self.candidate_reset_mode))
        return cells

    def cells(self, n_features: int) -> list[tuple[NetworkSpec, int]]:
        out = []
        for lag in self.lags:
            for spec in self.architecture_cells(n_features, lag):
                out.append((spec, lag))
        return out

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:  # type: ignore[attr-defined]
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        known = set(cls.__dataclass_fields__)  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()}
        return cls(**kwargs)


@dataclass
class SweepResult:
    spec: NetworkSpec
    lag: int
    model: TrainedModel | None
    metrics: dict               # val_mse, test_mse, best_epoch (when trained)
    error: str | None = None


def grid_sweep(data, grid: GridSpec, config: TrainingConfig,
               keep_models: bool = False) -> list[SweepResult]:
    """Train every grid cell and rank by test MSE over the scaled outputs.

    ``data`` provides ``n_features`` and ``windows(lag, which)`` for which in
    train/val/test (see pipeline.ClusterData).  Cell failures are recorded on
    their row and do not stop the sweep.  Each cell trains under its own seed
    derived from the base seed and the cell's position.
    """
    cells = grid.cells(data.n_features)
    if not cells:
        raise EmptyGrid()
    results: list[SweepResult] = []
    for index, (spec, lag) in enumerate(cells):
        cell_config = replace(config, lag_days=lag,
                              seed=derive_seed(config.seed, "cell", index))
        try:
            model = train(data.windows(lag, "train"), data.windows(lag, "val"),
                          spec, cell_config)
            x_test, y_test = stack_windows(data.windows(lag, "test"),
                                           spec.is_recurrent, np.dtype(config.dtype))
            metrics = {"val_mse": model.best_val_mse,
                       "test_mse": mse_of(model.network, x_test, y_test),
                       "best_epoch": model.best_epoch}
            results.append(SweepResult(spec=spec, lag=lag,
                                       model=model if keep_models else None,
                                       metrics=metrics))
        except EmulationError as exc:
            logger.warning("grid cell %d failed: %s", index, exc)
            results.append(SweepResult(spec=spec, lag=lag, model=None,
                                       metrics={}, error=str(exc)))
    results.sort(key=lambda r: (r.error is not None,
                                r.metrics.get("test_mse", np.inf)))
    return results


def leaderboard(results) -> list[dict]:
    """JSON-ready ranking of sweep results (failures last, unranked)."""
    rows = []
    for rank, result in enumerate(results, start=1):
        rows.append({
            "rank": rank if result.error is None else None,
            "architecture": result.spec.architecture,
            "lag": result.lag,
            "spec": result.spec.to_dict(),
            **{k: (float(v) if isinstance(v, float) else v)
               for k, v in result.metrics.items()},
            "error": result.error,
        })
    return rows
