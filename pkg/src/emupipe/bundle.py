"""Self-contained on-disk model bundles.

A bundle is a directory holding ``manifest.json`` and ``weights.bin``.  The
manifest carries the network spec, lag, scalers, feature order, cluster
provenance, training config and log, a table of parameter entries (name,
shape, offset into the flat array) and the sha256 of the weights file.  The
binary is the flat little-endian 64-bit-float concatenation of all parameter
arrays in manifest order; float32-trained weights are upcast on save and
cast back on load, which is lossless.

Nothing in a bundle depends on when it was written, so re-saving the same
model produces identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .clustering import Cluster
from .errors import BundleVersionMismatch, DimensionMismatch
from .nn import NetworkSpec, zeroed
from .scaling import ColumnScaler
from .training import TrainedModel, TrainingConfig

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"


def _weights_blob(model: TrainedModel):
    entries = []
    chunks = []
    offset = 0
    for name, array in model.network.parameters():
        entries.append({"name": name, "shape": list(array.shape),
                        "offset": offset, "size": int(array.size)})
        chunks.append(np.ascontiguousarray(array, dtype="<f8").ravel())
        offset += array.size
    blob = np.concatenate(chunks).tobytes()
    return entries, blob


def save_bundle(model: TrainedModel, directory, cluster: Cluster | None = None) -> Path:
    """Write manifest.json + weights.bin under ``directory`` (created)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, blob = _weights_blob(model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "network": model.spec.to_dict(),
        "dtype": str(np.dtype(model.network.dtype)),
        "lag_days": model.config.lag_days,
        "training_config": model.config.to_dict(),
        "feature_names": list(model.feature_names or ()),
        "feature_scaler": model.feature_scaler.to_dict() if model.feature_scaler else None,
        "target_scaler": model.target_scaler.to_dict() if model.target_scaler else None,
        "cluster": cluster.to_dict() if cluster is not None else None,
        "cluster_id": cluster.cluster_id if cluster is not None else model.cluster_id,
        "run_ids": list(cluster.run_ids if cluster is not None else model.run_ids),
        "best_epoch": model.best_epoch,
        "best_val_mse": model.best_val_mse,
        "training_log": model.log,
        "parameters": entries,
        "weights_sha256": hashlib.sha256(blob).hexdigest(),
    }
    (directory / WEIGHTS_NAME).write_bytes(blob)
    with open(directory / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_bundle(directory) -> TrainedModel:
    """Reconstruct a TrainedModel; fails loudly on version or checksum drift."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise BundleVersionMismatch(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise BundleVersionMismatch(
            f"bundle format {version!r}, this build reads {FORMAT_VERSION}")
    blob = (directory / WEIGHTS_NAME).read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if digest != manifest["weights_sha256"]:
        raise BundleVersionMismatch("weights checksum does not match manifest")

    spec = NetworkSpec.from_dict(manifest["network"])
    net = zeroed(spec, dtype=np.float64)
    flat = np.frombuffer(blob, dtype="<f8")
    named = dict(net.parameters())
    if len(named) != len(manifest["parameters"]):
        raise DimensionMismatch(
            f"manifest lists {len(manifest['parameters'])} parameter arrays, "
            f"spec implies {len(named)}")
    for entry in manifest["parameters"]:
        array = named[entry["name"]]
        if list(array.shape) != entry["shape"]:
            raise DimensionMismatch(
                f"{entry['name']}: bundle shape {entry['shape']}, spec {list(array.shape)}")
        values = flat[entry["offset"]:entry["offset"] + entry["size"]]
        array[...] = values.reshape(array.shape)
    if manifest["dtype"] != "float64":
        net = net.astype(np.dtype(manifest["dtype"]))

    feature_scaler = (ColumnScaler.from_dict(manifest["feature_scaler"])
                      if manifest.get("feature_scaler") else None)
    target_scaler = (ColumnScaler.from_dict(manifest["target_scaler"])
                     if manifest.get("target_scaler") else None)
    return TrainedModel(
        spec=spec,
        network=net,
        config=TrainingConfig.from_dict(manifest["training_config"]),
        log=list(manifest["training_log"]),
        best_epoch=manifest["best_epoch"],
        best_val_mse=manifest["best_val_mse"],
        feature_names=tuple(manifest["feature_names"]),
        feature_scaler=feature_scaler,
        target_scaler=target_scaler,
        cluster_id=manifest.get("cluster_id"),
        run_ids=tuple(manifest.get("run_ids", ())),
    )


def bundle_cluster(directory) -> Cluster | None:
    """The cluster recorded in a bundle, if any."""
    with open(Path(directory) / MANIFEST_NAME) as fh:
        manifest = json.load(fh)
    return Cluster.from_dict(manifest["cluster"]) if manifest.get("cluster") else None
