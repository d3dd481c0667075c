"""Accuracy metrics and scatter exports for trained emulators.

Three metrics per output variable: MSE, MAE, and Bias.  Bias is
mean(emulated - true) throughout, so negative bias means under-prediction;
every report states the convention.  Metrics are computed on scaled outputs
by default, with physical units available by flag, and reports serialise to
a JSON layout of {threshold: {variable: {MSE, MAE, Bias}}}.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import OUTPUT_VARIABLES
from .errors import EmptyData, LengthMismatch

logger = logging.getLogger(__name__)

BIAS_CONVENTION = "mean(emulated - true)"


def _aligned(true, pred):
    true = np.asarray(true, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if len(true) != len(pred):
        raise LengthMismatch(len(true), len(pred))
    return true, pred


def metrics(true, pred) -> tuple[float, float, float]:
    """(MSE, MAE, Bias) of a prediction series against its truth."""
    true, pred = _aligned(true, pred)
    if len(true) == 0:
        raise EmptyData("metrics of empty series")
    err = pred - true
    return (float(np.mean(err * err)),
            float(np.mean(np.abs(err))),
            float(np.mean(err)))


@dataclass
class MetricsReport:
    """Per-variable accuracy on one split of one cluster."""

    split: str                                  # train / val / test
    units: str                                  # "scaled" or "physical"
    per_variable: dict[str, dict[str, float]]   # var -> {MSE, MAE, Bias, n}
    threshold: float | None = None
    cluster_id: str | None = None
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.units not in ("scaled", "physical"):
            raise ValueError(f"units must be 'scaled' or 'physical', got {self.units!r}")
        for var, row in self.per_variable.items():
            if row["n"] <= 0:
                raise ValueError(f"{var}: metric row needs n > 0")
            if row["MSE"] < 0 or row["MAE"] < 0:
                raise ValueError(f"{var}: MSE and MAE cannot be negative")

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "units": self.units,
            "bias_convention": BIAS_CONVENTION,
            "threshold": self.threshold,
            "cluster_id": self.cluster_id,
            "per_variable": {var: dict(row) for var, row in self.per_variable.items()},
            "notes": dict(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(split=data["split"], units=data["units"],
                   per_variable={v: dict(r) for v, r in data["per_variable"].items()},
                   threshold=data.get("threshold"), cluster_id=data.get("cluster_id"),
                   notes=dict(data.get("notes", {})))


def build_report(y_true, y_pred, split: str, units: str = "scaled",
                 variables=OUTPUT_VARIABLES, threshold: float | None = None,
                 cluster_id: str | None = None) -> MetricsReport:
    """Column-wise metrics over (n, len(variables)) truth/prediction arrays."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(y_true.shape[0], y_pred.shape[0])
    if y_true.ndim != 2 or y_true.shape[1] != len(variables):
        raise ValueError(f"expected (n, {len(variables)}) arrays, got {y_true.shape}")
    per_variable = {}
    for i, var in enumerate(variables):
        mse, mae, bias = metrics(y_true[:, i], y_pred[:, i])
        per_variable[var] = {"MSE": mse, "MAE": mae, "Bias": bias,
                             "n": int(y_true.shape[0])}
    return MetricsReport(split=split, units=units, per_variable=per_variable,
                         threshold=threshold, cluster_id=cluster_id)


def reports_by_threshold(reports) -> dict:
    """Stack reports into {threshold: {variable: {MSE, MAE, Bias}}} JSON form."""
    out: dict = {"bias_convention": BIAS_CONVENTION, "results": {}}
    for report in reports:
        key = f"{report.threshold:g}" if report.threshold is not None else "none"
        out["results"][key] = {
            var: {"MSE": row["MSE"], "MAE": row["MAE"], "Bias": row["Bias"]}
            for var, row in report.per_variable.items()}
    return out


def write_report_json(reports, path):
    with open(path, "w") as fh:
        json.dump(reports_by_threshold(reports), fh, indent=2, sort_keys=True)
        fh.write("\n")


def scatter_export(true, pred, variable: str, path) -> int:
    """Write per-day (true, emulated) pairs for a scatter plot.

    Physical units are expected.  Non-finite pairs are dropped.  The leading
    comment row carries the shared axis maximum so a plotting script can draw
    the identity line without rescanning.  Returns the number of data rows.
    """
    true, pred = _aligned(true, pred)
    keep = np.isfinite(true) & np.isfinite(pred)
    true, pred = true[keep], pred[keep]
    axis_max = float(max(true.max(), pred.max())) if len(true) else 0.0
    with open(path, "w", newline="") as fh:
        fh.write(f"# variable={variable} axis_max={axis_max!r}\n")
        fh.write("true,emulated\n")
        for t, p in zip(true, pred):
            fh.write(f"{float(t)!r},{float(p)!r}\n")
    if len(true) == 0:
        logger.warning("scatter export for %s is empty", variable)
    return len(true)


def high_value_diagnostics(true, pred, quantile: float) -> dict:
    """Metrics restricted to the upper tail of the nonzero true values.

    The cutoff is the given quantile of the nonzero true values; all days
    with true value at or above it are scored.  Exposes the failure mode
    where a model tracks typical days but misses the events that matter.
    """
    if not 0.0 <= quantile < 1.0:
        raise ValueError(f"quantile must be in [0, 1), got {quantile}")
    true, pred = _aligned(true, pred)
    nonzero = true[true != 0.0]
    if len(nonzero) == 0:
        raise EmptyData("no nonzero true values to take a quantile of")
    cutoff = float(np.quantile(nonzero, quantile))
    keep = true >= cutoff
    if not np.any(keep):
        raise EmptyData("quantile cutoff excludes every day")
    mse, mae, bias = metrics(true[keep], pred[keep])
    return {"quantile": quantile, "cutoff": cutoff, "n": int(keep.sum()),
            "MSE": mse, "MAE": mae, "Bias": bias}
