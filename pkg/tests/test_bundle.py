"""Bundle round-trips, checksum verification, byte-stable re-saves."""

import json

import numpy as np
import pytest

from emupipe import (
    Cluster,
    NetworkSpec,
    TrainingConfig,
    fit_scaler,
    load_bundle,
    save_bundle,
    train,
)
from emupipe.bundle import MANIFEST_NAME, WEIGHTS_NAME, bundle_cluster
from emupipe.errors import BundleVersionMismatch


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(70)
    x = rng.uniform(size=(60, 2, 5)).astype(np.float32)
    y = rng.uniform(size=(60, 4)).astype(np.float32)
    spec = NetworkSpec("GRU-FFNN", input_dim=5, output_dim=4,
                       recurrent_layers=2, recurrent_width=6,
                       ff_layers=1, ff_start_width=8,
                       candidate_reset_mode="as_written")
    config = TrainingConfig(lag_days=2, learning_rate=0.05, max_epochs=3,
                            patience=3, seed=14, dtype="float32")
    trained = train((x, y), (x, y), spec, config)
    trained.feature_names = tuple(f"f{i}" for i in range(5))
    trained.feature_scaler = fit_scaler(rng.uniform(size=(10, 5)), trained.feature_names)
    trained.target_scaler = fit_scaler(
        rng.uniform(size=(10, 4)), ("runoff", "soil_loss", "DINrunoff", "Nleached"))
    trained.cluster_id = "c0001"
    trained.run_ids = ("a", "b")
    return trained


class TestRoundTrip:
    def test_everything_survives(self, model, tmp_path):
        save_bundle(model, tmp_path / "b")
        back = load_bundle(tmp_path / "b")
        assert back.spec == model.spec
        assert back.config == model.config
        assert back.network.dtype == np.float32
        for (name, a), (_, b) in zip(model.network.parameters(),
                                     back.network.parameters()):
            np.testing.assert_array_equal(a, b, err_msg=name)
        assert back.feature_names == model.feature_names
        assert back.feature_scaler.equals(model.feature_scaler)
        assert back.target_scaler.equals(model.target_scaler)
        assert back.log == model.log
        assert back.best_epoch == model.best_epoch
        assert back.best_val_mse == model.best_val_mse
        assert back.cluster_id == "c0001" and back.run_ids == ("a", "b")

    def test_predictions_identical_after_reload(self, model, tmp_path):
        save_bundle(model, tmp_path / "b")
        back = load_bundle(tmp_path / "b")
        x = np.random.default_rng(71).uniform(size=(20, 2, 5)).astype(np.float32)
        np.testing.assert_array_equal(model.predict(x), back.predict(x))

    def test_float32_upcast_is_lossless(self, model, tmp_path):
        save_bundle(model, tmp_path / "b")
        flat = np.frombuffer((tmp_path / "b" / WEIGHTS_NAME).read_bytes(), dtype="<f8")
        offset = 0
        for name, array in model.network.parameters():
            chunk = flat[offset:offset + array.size].reshape(array.shape)
            np.testing.assert_array_equal(chunk.astype(np.float32), array, err_msg=name)
            offset += array.size

    def test_resave_is_byte_identical(self, model, tmp_path):
        save_bundle(model, tmp_path / "one")
        save_bundle(model, tmp_path / "two")
        assert ((tmp_path / "one" / WEIGHTS_NAME).read_bytes()
                == (tmp_path / "two" / WEIGHTS_NAME).read_bytes())
        assert ((tmp_path / "one" / MANIFEST_NAME).read_bytes()
                == (tmp_path / "two" / MANIFEST_NAME).read_bytes())

    def test_cluster_attachment(self, model, tmp_path):
        cluster = Cluster(cluster_id="c0009", run_ids=("a", "b"),
                          group={"soil_type": "loam"}, threshold=0.95)
        save_bundle(model, tmp_path / "b", cluster=cluster)
        assert bundle_cluster(tmp_path / "b") == cluster
        back = load_bundle(tmp_path / "b")
        assert back.cluster_id == "c0009"
        save_bundle(model, tmp_path / "plain")
        assert bundle_cluster(tmp_path / "plain") is None


class TestFailureModes:
    def test_corrupted_weights_detected(self, model, tmp_path):
        path = save_bundle(model, tmp_path / "b")
        blob = bytearray((path / WEIGHTS_NAME).read_bytes())
        blob[13] ^= 0xFF
        (path / WEIGHTS_NAME).write_bytes(bytes(blob))
        with pytest.raises(BundleVersionMismatch, match="checksum"):
            load_bundle(path)

    def test_future_format_version_refused(self, model, tmp_path):
        path = save_bundle(model, tmp_path / "b")
        manifest = json.loads((path / MANIFEST_NAME).read_text())
        manifest["format_version"] = 99
        (path / MANIFEST_NAME).write_text(json.dumps(manifest))
        with pytest.raises(BundleVersionMismatch, match="99"):
            load_bundle(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(BundleVersionMismatch, match="manifest"):
            load_bundle(tmp_path)

    def test_manifest_has_no_timestamps(self, model, tmp_path):
        path = save_bundle(model, tmp_path / "b")
        text = (path / MANIFEST_NAME).read_text().lower()
        for word in ("timestamp", "created", "saved_at", '"time"', '"date"'):
            assert word not in text
