"""Command-line pipeline: synth -> ingest -> featurize -> cluster -> train -> report.

One JSON config document drives every subcommand, so re-running any step
with the same config and seed reproduces its outputs byte for byte.  All
logging goes to standard error; files are the only machine-readable output.

    emupipe synth     --config cfg.json          # write a synthetic archive
    emupipe ingest    --config cfg.json          # validate + summarise runs
    emupipe featurize --config cfg.json          # per-run feature CSVs
    emupipe cluster   --config cfg.json          # score matrices + cluster sets
    emupipe train     --config cfg.json --cluster-id c0000 [--threshold 0.95]
    emupipe sweep     --config cfg.json --cluster-id c0000
    emupipe report    --config cfg.json --bundle out/models/c0000
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from .clustering import Cluster, extract_clusters, group_runs, score_group
from .dataset import OUTPUT_VARIABLES, RunSchema, SplitSpec, load_archive, write_run
from .errors import ConfigError, EmulationError, NoRuns
from .evaluation import (build_report, high_value_diagnostics, scatter_export,
                         write_report_json)
from .features import FeatureSpec, derive_features
from .nn import NetworkSpec
from .synth import SYNTH_FORCINGS, SynthConfig, reference_archive
from .training import (ClusterData, GridSpec, TrainingConfig, grid_sweep,
                       leaderboard, prepare_cluster, stack_windows, train,
                       write_training_log)

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1


@dataclass
class ReportSettings:
    split: str = "val"
    units: str = "scaled"
    high_value_quantile: float | None = None

    def __post_init__(self):
        if self.split not in ("train", "val", "validation", "test"):
            raise ConfigError(f"report split must be train/val/test, got {self.split!r}")
        if self.units not in ("scaled", "physical"):
            raise ConfigError(f"report units must be scaled/physical, got {self.units!r}")


@dataclass
class PipelineConfig:
    """Everything a pipeline invocation needs, loaded from one JSON file."""

    version: int
    seed: int = 0
    out_dir: str = "out"
    runs_dir: str = "runs"
    schema: RunSchema = field(default_factory=lambda: RunSchema.identity(SYNTH_FORCINGS))
    synth: SynthConfig | None = None
    features: FeatureSpec = field(default_factory=FeatureSpec)
    split: SplitSpec = field(default_factory=SplitSpec.default)
    thresholds: tuple[float, ...] = (0.95, 0.90, 0.85)
    cluster_mode: str = "component"
    network: dict | None = None         # architecture params, input_dim implied
    grid: GridSpec | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)
    report: ReportSettings = field(default_factory=ReportSettings)

    KEYS = ("version", "seed", "out_dir", "runs_dir", "schema", "synth",
            "features", "split", "thresholds", "cluster_mode", "network",
            "grid", "training", "report")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        unknown = set(data) - set(cls.KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "version" not in data:
            raise ConfigError("config requires a 'version' field")
        if data["version"] != CONFIG_VERSION:
            raise ConfigError(f"config version {data['version']!r} unsupported, "
                              f"expected {CONFIG_VERSION}")
        try:
            return cls(
                version=data["version"],
                seed=int(data.get("seed", 0)),
                out_dir=data.get("out_dir", "out"),
                runs_dir=data.get("runs_dir", "runs"),
                schema=(RunSchema.from_dict(data["schema"]) if "schema" in data
                        else RunSchema.identity(SYNTH_FORCINGS)),
                synth=SynthConfig.from_dict(data["synth"]) if data.get("synth") else None,
                features=(FeatureSpec.from_dict(data["features"])
                          if "features" in data else FeatureSpec()),
                split=(SplitSpec.from_dict(data["split"]) if "split" in data
                       else SplitSpec.default()),
                thresholds=tuple(data.get("thresholds", (0.95, 0.90, 0.85))),
                cluster_mode=data.get("cluster_mode", "component"),
                network=data.get("network"),
                grid=GridSpec.from_dict(data["grid"]) if data.get("grid") else None,
                training=(TrainingConfig.from_dict(data["training"])
                          if "training" in data else TrainingConfig()),
                report=(ReportSettings(**data["report"]) if "report" in data
                        else ReportSettings()),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _out(config: PipelineConfig, *parts) -> Path:
    path = Path(config.out_dir, *parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _load_runs(config: PipelineConfig):
    runs = load_archive(config.runs_dir, config.schema)
    if not runs:
        raise NoRuns(config.runs_dir)
    return runs


def _network_spec(config: PipelineConfig, n_features: int, lag: int) -> NetworkSpec:
    if not config.network:
        raise ConfigError("config has no 'network' section")
    params = dict(config.network)
    architecture = params.get("architecture", "GRU-FFNN")
    params.setdefault("output_dim", len(OUTPUT_VARIABLES))
    input_dim = n_features if architecture == "GRU-FFNN" else lag * n_features
    try:
        return NetworkSpec(input_dim=input_dim, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad network section: {exc}") from exc


def _clusters_path(config: PipelineConfig, threshold: float) -> Path:
    return _out(config, f"clusters_{threshold:g}.json")


def _load_clusters(config: PipelineConfig, threshold: float) -> list[Cluster]:
    path = _clusters_path(config, threshold)
    if not path.exists():
        raise ConfigError(f"{path} not found; run the cluster step first")
    with open(path) as fh:
        return [Cluster.from_dict(d) for d in json.load(fh)["clusters"]]


# -- subcommands ---------------------------------------------------------------


def cmd_synth(config: PipelineConfig, args) -> int:
    if config.synth is None:
        raise ConfigError("config has no 'synth' section")
    synth_config = config.synth
    if args.seed is not None:
        synth_config = replace(synth_config, seed=args.seed)
    runs = reference_archive(synth_config)
    runs_dir = Path(config.runs_dir)
    runs_dir.mkdir(parents=True, exist_ok=True)
    for run in runs:
        write_run(run, runs_dir / f"{run.run_id}.csv", config.schema)
    logger.info("wrote %d synthetic runs to %s", len(runs), runs_dir)
    return 0


def cmd_ingest(config: PipelineConfig, args) -> int:
    runs = _load_runs(config)
    summary = [{"run_id": run.run_id, "days": run.n_days,
                "first": str(run.dates[0]), "last": str(run.dates[-1]),
                "scenario": run.key.to_dict()} for run in runs]
    with open(_out(config, "ingest.json"), "w") as fh:
        json.dump({"n_runs": len(runs), "runs": summary}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("ingested %d runs", len(runs))
    return 0


def cmd_featurize(config: PipelineConfig, args) -> int:
    runs = _load_runs(config)
    for run in runs:
        table = derive_features(run, config.features)
        table.to_csv(_out(config, "features", f"{run.run_id}.csv"))
    logger.info("featurized %d runs (%d features)", len(runs),
                len(derive_features(runs[0], config.features).names))
    return 0


def cmd_cluster(config: PipelineConfig, args) -> int:
    runs = _load_runs(config)
    train_range = config.split.range_for("train")
    for index, (key, members) in enumerate(group_runs(runs).items()):
        matrix = score_group(members, train_range)
        path = _out(config, f"scores_group{index}.csv")
        with open(path, "w", newline="") as fh:
            fh.write("run_id," + ",".join(matrix.run_ids) + "\n")
            for rid, row in zip(matrix.run_ids, matrix.values):
                fh.write(rid + "," + ",".join(repr(float(v)) for v in row) + "\n")
    thresholds = [args.threshold] if args.threshold is not None else config.thresholds
    for threshold in thresholds:
        clusters = extract_clusters(runs, threshold, config.split, config.cluster_mode)
        payload = {"threshold": threshold, "mode": config.cluster_mode,
                   "clusters": [c.to_dict() for c in clusters]}
        with open(_clusters_path(config, threshold), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        logger.info("threshold %g: %d clusters", threshold, len(clusters))
    return 0


def _prepare(config: PipelineConfig, cluster_id: str, threshold: float) -> tuple:
    runs = _load_runs(config)
    clusters = _load_clusters(config, threshold)
    chosen = next((c for c in clusters if c.cluster_id == cluster_id), None)
    if chosen is None:
        raise ConfigError(f"cluster {cluster_id!r} not in {_clusters_path(config, threshold)}")
    return chosen, prepare_cluster(runs, chosen, config.features, config.split)


def cmd_train(config: PipelineConfig, args) -> int:
    threshold = args.threshold if args.threshold is not None else config.thresholds[0]
    cluster, data = _prepare(config, args.cluster_id, threshold)
    training = config.training
    if args.seed is not None:
        training = replace(training, seed=args.seed)
    lag = training.lag_days
    spec = _network_spec(config, data.n_features, lag)
    model = train(data.windows(lag, "train"), data.windows(lag, "val"),
                  spec, training)
    model.feature_names = data.feature_names
    model.feature_scaler = data.feature_scaler
    model.target_scaler = data.target_scaler
    model.cluster_id = cluster.cluster_id
    model.run_ids = cluster.run_ids
    bundle_dir = bundle_io.save_bundle(model, _out(config, "models", cluster.cluster_id),
                                       cluster=cluster)
    write_training_log(model.log, bundle_dir / "training_log.csv")
    logger.info("trained %s: best epoch %d, val MSE %.6g -> %s",
                cluster.cluster_id, model.best_epoch, model.best_val_mse, bundle_dir)
    return 0


def cmd_sweep(config: PipelineConfig, args) -> int:
    if config.grid is None:
        raise ConfigError("config has no 'grid' section")
    threshold = args.threshold if args.threshold is not None else config.thresholds[0]
    cluster, data = _prepare(config, args.cluster_id, threshold)
    training = config.training
    if args.seed is not None:
        training = replace(training, seed=args.seed)
    results = grid_sweep(data, config.grid, training)
    with open(_out(config, f"leaderboard_{cluster.cluster_id}.json"), "w") as fh:
        json.dump(leaderboard(results), fh, indent=2, sort_keys=True)
        fh.write("\n")
    failures = sum(1 for r in results if r.error is not None)
    logger.info("sweep over %d cells done (%d failed)", len(results), failures)
    return 0 if failures < len(results) else 1


def cmd_report(config: PipelineConfig, args) -> int:
    runs = _load_runs(config)
    which = args.split or config.report.split
    reports = []
    for bundle_dir in args.bundle:
        model = bundle_io.load_bundle(bundle_dir)
        cluster = bundle_io.bundle_cluster(bundle_dir)
        data = ClusterData(
            [run for run in runs if run.run_id in model.run_ids],
            config.features, config.split,
            feature_scaler=model.feature_scaler, target_scaler=model.target_scaler,
            cluster_id=model.cluster_id,
            threshold=cluster.threshold if cluster else None)
        if data.feature_names != model.feature_names:
            raise ConfigError("config feature settings disagree with the bundle's "
                              "recorded feature order")
        samples = data.windows(model.config.lag_days, which)
        x, y_scaled = stack_windows(samples, model.spec.is_recurrent,
                                    np.dtype(model.config.dtype))
        pred_scaled = model.predict(x)
        y_phys = model.target_scaler.inverse(np.asarray(y_scaled, dtype=np.float64))
        pred_phys = model.target_scaler.inverse(np.asarray(pred_scaled, dtype=np.float64))
        if config.report.units == "physical":
            y_report, pred_report = y_phys, pred_phys
        else:
            y_report, pred_report = y_scaled, pred_scaled
        report = build_report(y_report, pred_report, split=which,
                              units=config.report.units,
                              threshold=data.threshold, cluster_id=model.cluster_id)
        if config.report.high_value_quantile is not None:
            diagnostics = {}
            for i, var in enumerate(OUTPUT_VARIABLES):
                try:
                    diagnostics[var] = high_value_diagnostics(
                        y_report[:, i], pred_report[:, i],
                        config.report.high_value_quantile)
                except EmulationError as exc:
                    diagnostics[var] = {"error": str(exc)}
            report.notes["high_value"] = diagnostics
        reports.append(report)
        scatter_dir = Path(bundle_dir) / f"scatter_{which}"
        scatter_dir.mkdir(parents=True, exist_ok=True)
        for i, var in enumerate(OUTPUT_VARIABLES):
            scatter_export(y_phys[:, i], pred_phys[:, i], var,
                           scatter_dir / f"{var}.csv")
    write_report_json(reports, _out(config, f"report_{which}.json"))
    logger.info("evaluated %d bundle(s) on %s", len(reports), which)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emupipe",
        description="Train and evaluate daily-timestep simulator emulators.")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="pipeline config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker cap for parallel sections (currently sequential)")

    common(sub.add_parser("synth", help="generate a synthetic run archive"))
    common(sub.add_parser("ingest", help="validate runs and write a summary"))
    common(sub.add_parser("featurize", help="write per-run feature tables"))
    p = sub.add_parser("cluster", help="score run similarity and extract clusters")
    common(p)
    p.add_argument("--threshold", type=float, default=None,
                   help="single threshold instead of the config list")
    for name, help_text in (("train", "train one cluster's emulator"),
                            ("sweep", "train every grid cell for one cluster")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--cluster-id", required=True)
        p.add_argument("--threshold", type=float, default=None)
    p = sub.add_parser("report", help="evaluate bundles and export scatter data")
    common(p)
    p.add_argument("--bundle", action="append", required=True,
                   help="bundle directory (repeatable)")
    p.add_argument("--split", default=None, choices=["train", "val", "test"])
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        stream=sys.stderr,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = PipelineConfig.load(args.config)
        return COMMANDS[args.command](config, args)
    except EmulationError as exc:
        json.dump({"error": type(exc).__name__, "detail": str(exc)},
                  sys.stderr, indent=2)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
