"""Emulation pipeline for daily-timestep paddock simulators.

Train small neural emulators (feed-forward or gated-recurrent) of a
mechanistic simulator's four daily water-quality outputs, from archives of
simulated runs: feature derivation, run clustering by output similarity,
min-max scaling, windowed training with early stopping, and evaluation.
"""

from .bundle import load_bundle, save_bundle
from .clustering import (UNDEFINED, Cluster, ScoreMatrix, cluster_for_run,
                         extract_clusters, group_runs, min_output_correlation,
                         pearson, score_group)
from .dataset import (OUTPUT_VARIABLES, ModelRun, RunSchema, ScenarioKey,
                      SplitSpec, concat_runs, load_archive, load_run, split_run,
                      write_run)
from .evaluation import (MetricsReport, build_report, high_value_diagnostics,
                         metrics, scatter_export)
from .features import (FeatureSpec, FeatureTable, derive_features, exp_smooth,
                       persistent_value, seasonal_encoding, time_since_event)
from .nn import (DenseLayer, GruLayer, Network, NetworkSpec, ffnn_forward,
                 funnel_widths, gru_ffnn_forward, gru_step, initialise)
from .scaling import ColumnScaler, fit_scaler
from .synth import (ManagementPlan, SoilType, SynthConfig, gen_meteorology,
                    reference_archive, toy_simulate)
from .training import (ClusterData, GridSpec, TrainedModel, TrainingConfig,
                       WindowSample, derive_seed, grid_sweep, leaderboard,
                       make_windows, prepare_cluster, train)

__version__ = "0.1.0"

__all__ = [
    "OUTPUT_VARIABLES", "ModelRun", "RunSchema", "ScenarioKey", "SplitSpec",
    "load_run", "load_archive", "write_run", "split_run", "concat_runs",
    "FeatureSpec", "FeatureTable", "derive_features", "exp_smooth",
    "seasonal_encoding", "time_since_event", "persistent_value",
    "ColumnScaler", "fit_scaler",
    "UNDEFINED", "Cluster", "ScoreMatrix", "group_runs", "pearson", "min_output_correlation",
    "score_group", "extract_clusters", "cluster_for_run",
    "DenseLayer", "GruLayer", "Network", "NetworkSpec", "funnel_widths",
    "ffnn_forward", "gru_step", "gru_ffnn_forward", "initialise",
    "TrainingConfig", "TrainedModel", "ClusterData", "GridSpec",
    "WindowSample", "make_windows", "prepare_cluster", "train", "grid_sweep",
    "leaderboard", "derive_seed",
    "MetricsReport", "metrics", "build_report", "scatter_export",
    "high_value_diagnostics",
    "SynthConfig", "SoilType", "ManagementPlan", "gen_meteorology",
    "toy_simulate", "reference_archive",
    "save_bundle", "load_bundle",
    "__version__",
]
