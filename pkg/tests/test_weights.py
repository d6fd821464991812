"""Checkpoint format: round-trips, corruption detection, mismatch naming."""

import numpy as np
import pytest

from earnet import weights as W
from earnet.errors import WeightsError
from earnet.model import ModelConfig, build_best_earnet

DESK = ModelConfig(width_multiplier=0.25, input_size=64)


@pytest.fixture()
def model():
    return build_best_earnet(DESK, seed=0)


class TestRoundTrip:
    def test_save_load_save_byte_identical(self, model, tmp_path):
        p1 = tmp_path / "a.benw"
        p2 = tmp_path / "b.benw"
        W.save_weights(model, str(p1))
        fresh = build_best_earnet(DESK, seed=99)
        W.load_weights(fresh, str(p1))
        W.save_weights(fresh, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_restores_values(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        originals = {n: t.numpy().copy() for n, t in model.named_state()}
        for _, t in model.named_state():
            t.data[...] = 0.0
        W.load_weights(model, str(path))
        for n, t in model.named_state():
            np.testing.assert_array_equal(t.numpy(), originals[n])

    def test_header_order_matches_graph_order(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        names = [e["name"] for e in W.read_header(str(path))]
        assert names == [n for n, _ in model.named_state()]
        assert all(e["dtype"] == "f32" for e in W.read_header(str(path)))

    def test_float64_model_saves_as_f32(self, model, tmp_path):
        model.astype(np.float64)
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        fresh = build_best_earnet(DESK, seed=0)
        W.load_weights(fresh, str(path))
        assert fresh.backbone.stem.conv.weight.dtype == np.float32


class TestCorruption:
    def test_truncated_file(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(WeightsError, match="truncated"):
            W.load_weights(model, str(path))

    def test_flipped_payload_byte_fails_checksum(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        blob = bytearray(path.read_bytes())
        blob[-100] ^= 0xFF  # inside the last tensor blob
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightsError, match="checksum"):
            W.load_weights(model, str(path))

    def test_bad_magic(self, model, tmp_path):
        path = tmp_path / "m.benw"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(WeightsError, match="magic"):
            W.load_weights(model, str(path))

    def test_unknown_version(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        blob = bytearray(path.read_bytes())
        blob[4] = 9  # version field
        path.write_bytes(bytes(blob))
        with pytest.raises(WeightsError, match="version"):
            W.load_weights(model, str(path))

    def test_trailing_garbage(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(WeightsError, match="trailing"):
            W.load_weights(model, str(path))


class TestMismatch:
    def test_load_into_wrong_width_names_tensor(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        other = build_best_earnet(ModelConfig(width_multiplier=0.5, input_size=64), seed=0)
        with pytest.raises(WeightsError) as exc:
            W.load_weights(other, str(path))
        # diagnostics name the first offending tensor
        assert "stem.conv.weight" in str(exc.value)

    def test_load_into_wrong_class_count(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        other = build_best_earnet(
            ModelConfig(width_multiplier=0.25, input_size=64, num_classes=5), seed=0
        )
        with pytest.raises(WeightsError, match="head"):
            W.load_weights(other, str(path))

    def test_param_count_matches_serialized_scalars(self, model, tmp_path):
        path = tmp_path / "m.benw"
        W.save_weights(model, str(path))
        param_names = {n for n, _ in model.named_parameters()}
        serialized = 0
        for e in W.read_header(str(path)):
            if e["name"] in param_names:
                serialized += int(np.prod(e["shape"])) if e["shape"] else 1
        assert serialized == model.parameter_count()
