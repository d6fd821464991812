"""Command-line surface: every subcommand end to end at desk scale."""

import dataclasses
import json

import numpy as np
import pytest
from PIL import Image

from earnet import cli
from earnet.model import ModelConfig, build_best_earnet
from earnet.ranking import demo_comparison_csv
from earnet.weights import save_weights

DESK32 = ["--width", "0.25", "--input-size", "32"]


def run(capsys, argv):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def gen_dataset(tmp_path, capsys, per_class=6, size=32):
    out = tmp_path / "data"
    code, _, _ = run(
        capsys,
        ["gen-data", "--out", str(out), "--per-class", str(per_class),
         "--size", str(size), "--seed", "0"],
    )
    assert code == 0
    return out


class TestGenData:
    def test_writes_balanced_tree(self, tmp_path, capsys):
        out = tmp_path / "ds"
        code, text, _ = run(
            capsys,
            ["gen-data", "--out", str(out), "--per-class", "2", "--size", "32"],
        )
        assert code == 0
        assert "18" in text
        assert len(list(out.glob("*/*.png"))) == 18

    def test_json_output(self, tmp_path, capsys):
        out = tmp_path / "ds"
        code, text, _ = run(
            capsys,
            ["gen-data", "--out", str(out), "--per-class", "1", "--size", "32",
             "--json"],
        )
        assert code == 0
        assert json.loads(text) == {"written": 9, "out": str(out)}

    def test_seed_changes_bytes(self, tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out, seed in ((a, "5"), (b, "6")):
            run(capsys, ["gen-data", "--out", str(out), "--per-class", "1",
                         "--size", "32", "--seed", seed])
        fa = (a / "AOM" / "AOM_0000.png").read_bytes()
        fb = (b / "AOM" / "AOM_0000.png").read_bytes()
        assert fa != fb


class TestTrainEvalPipeline:
    def test_end_to_end_desk_scale(self, tmp_path, capsys):
        data = gen_dataset(tmp_path, capsys)
        runs = tmp_path / "runs"
        code, text, _ = run(
            capsys,
            ["train", "--data", str(data), "--out", str(runs), "--folds", "3",
             "--epochs", "2", "--batch-size", "16", "--lr", "0.01",
             *DESK32, "--json"],
        )
        assert code == 0
        summary = json.loads(text)
        assert len(summary["accuracies"]) == 3
        assert summary["mean_val_acc"] == pytest.approx(
            float(np.mean(summary["accuracies"]))
        )
        assert (runs / "fold0" / "best.benw").exists()
        assert (runs / "metrics.csv").exists()

        code, text, _ = run(
            capsys,
            ["eval", "--data", str(data),
             "--weights", str(runs / "fold0" / "best.benw"), *DESK32, "--json"],
        )
        assert code == 0
        result = json.loads(text)
        assert 0.0 <= result["accuracy"] <= 1.0
        assert result["n"] == 54
        assert len(result["per_class_f1"]) == 9

    def test_single_fold_mode(self, tmp_path, capsys):
        data = gen_dataset(tmp_path, capsys)
        runs = tmp_path / "one"
        code, text, _ = run(
            capsys,
            ["train", "--data", str(data), "--out", str(runs), "--folds", "3",
             "--fold", "1", "--epochs", "1", "--batch-size", "16", *DESK32,
             "--json"],
        )
        assert code == 0
        assert json.loads(text)["fold"] == 1
        assert (runs / "curve.csv").exists()

    def test_config_snapshot_round_trip(self, tmp_path, capsys):
        data = gen_dataset(tmp_path, capsys)
        runs = tmp_path / "snap"
        run(capsys, ["train", "--data", str(data), "--out", str(runs),
                     "--folds", "3", "--fold", "0", "--epochs", "1",
                     "--batch-size", "16", *DESK32])
        # the emitted snapshot must be usable as --config for eval
        code, text, _ = run(
            capsys,
            ["eval", "--data", str(data),
             "--weights", str(runs / "best.benw"),
             "--config", str(runs / "config.json"), "--json"],
        )
        assert code == 0
        assert json.loads(text)["n"] == 54


class TestRank:
    def test_reproduces_fps_share(self, tmp_path, capsys):
        src = tmp_path / "metrics.csv"
        src.write_text(demo_comparison_csv())
        out = tmp_path / "ranked.csv"
        code, text, _ = run(
            capsys, ["rank", "--input", str(src), "--out", str(out), "--json"]
        )
        assert code == 0
        rows = json.loads(text)["ranking"]
        best = next(r for r in rows if r["model"] == "Best-EarNet")
        assert best["fps_rsn"] == pytest.approx(80.0 / 455.0, abs=1e-9)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "model,R_rsn,F1_rsn,P_rsn,S_rsn,A_rsn,FPS_rsn,ORS,rank"
        assert len(lines) == 18

    def test_human_table_lists_models(self, tmp_path, capsys):
        src = tmp_path / "metrics.csv"
        src.write_text(demo_comparison_csv())
        code, text, _ = run(capsys, ["rank", "--input", str(src)])
        assert code == 0
        assert "Best-EarNet" in text

    def test_alpha_validation(self, tmp_path, capsys):
        src = tmp_path / "metrics.csv"
        src.write_text(demo_comparison_csv())
        code, _, err = run(
            capsys,
            ["rank", "--input", str(src), "--alpha", "1", "1", "1", "1", "1", "-1"],
        )
        assert code == 2
        assert "error" in err


class TestInferGradcam:
    def make_image(self, tmp_path, capsys):
        data = gen_dataset(tmp_path, capsys, per_class=1)
        return next((data / "AOM").glob("*.png"))

    def test_infer_prints_nine_rows(self, tmp_path, capsys):
        img = self.make_image(tmp_path, capsys)
        code, text, _ = run(capsys, ["infer", "--image", str(img), *DESK32])
        assert code == 0
        lines = text.strip().splitlines()
        assert len(lines) == 10  # nine probability rows plus the top-1 line
        assert lines[0].startswith("AOM")
        assert lines[-1].startswith("top1:")

    def test_infer_json_probabilities(self, tmp_path, capsys):
        img = self.make_image(tmp_path, capsys)
        code, text, _ = run(
            capsys, ["infer", "--image", str(img), *DESK32, "--json"]
        )
        payload = json.loads(text)
        assert code == 0
        assert len(payload["probabilities"]) == 9
        assert sum(payload["probabilities"]) == pytest.approx(1.0, abs=1e-6)
        top = int(np.argmax(payload["probabilities"]))
        assert payload["top1_class"] == payload["classes"][top]

    def test_infer_with_weights(self, tmp_path, capsys):
        img = self.make_image(tmp_path, capsys)
        cfg = ModelConfig(width_multiplier=0.25, input_size=32)
        model = build_best_earnet(cfg, seed=3)
        weights = tmp_path / "m.benw"
        save_weights(model, str(weights))
        code, text, _ = run(
            capsys,
            ["infer", "--image", str(img), "--weights", str(weights), *DESK32,
             "--json"],
        )
        assert code == 0

    def test_gradcam_writes_pngs(self, tmp_path, capsys):
        img = self.make_image(tmp_path, capsys)
        heat = tmp_path / "heat.png"
        blend = tmp_path / "blend.png"
        code, text, _ = run(
            capsys,
            ["gradcam", "--image", str(img), "--out", str(heat),
             "--overlay-out", str(blend), *DESK32, "--json"],
        )
        assert code == 0
        payload = json.loads(text)
        assert payload["heatmap"] == str(heat)
        assert 0 <= payload["target_class"] <= 8
        with Image.open(heat) as im:
            assert im.size == (32, 32)
            assert im.mode == "RGB"
        with Image.open(blend) as im:
            assert im.size == (32, 32)


class TestBenchCommand:
    def test_json_report(self, capsys, tmp_path):
        out_csv = tmp_path / "bench.csv"
        code, text, _ = run(
            capsys,
            ["bench", *DESK32, "--warmup", "0", "--iters", "3",
             "--out-csv", str(out_csv), "--json"],
        )
        assert code == 0
        payload = json.loads(text)
        assert payload["avg_fps"] > 0
        assert payload["input_shape"] == [1, 3, 32, 32]
        assert out_csv.exists()

    def test_human_report(self, capsys):
        code, text, _ = run(
            capsys, ["bench", *DESK32, "--warmup", "0", "--iters", "2"]
        )
        assert code == 0
        assert "avg fps" in text


class TestServeDispatch:
    def test_flags_reach_service(self, monkeypatch, capsys):
        captured = {}
        monkeypatch.setattr(cli.service, "serve", lambda cfg: captured.update(cfg=cfg))
        code, _, _ = run(
            capsys,
            ["serve", "--port", "9001", "--log-dir", "/tmp/logs", "--gate", "3.5"],
        )
        assert code == 0
        cfg = captured["cfg"]
        assert cfg.port == 9001
        assert cfg.log_dir == "/tmp/logs"
        assert cfg.sharpness_gate == 3.5

    def test_env_fallback(self, monkeypatch, capsys):
        captured = {}
        monkeypatch.setattr(cli.service, "serve", lambda cfg: captured.update(cfg=cfg))
        monkeypatch.setenv("EARNET_PORT", "9002")
        code, _, _ = run(capsys, ["serve"])
        assert code == 0
        assert captured["cfg"].port == 9002


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        code, _, err = run(capsys, ["explode"])
        assert code != 0
        assert "usage" in err

    def test_unknown_flag(self, capsys):
        code, _, err = run(capsys, ["bench", "--bogus"])
        assert code != 0
        assert "usage" in err

    def test_missing_required(self, capsys):
        code, _, err = run(capsys, ["train"])
        assert code != 0
        assert "usage" in err

    def test_version(self, capsys):
        code, text, _ = run(capsys, ["--version"])
        assert code == 0
        assert text.strip()

    def test_domain_error_exit_code(self, tmp_path, capsys):
        code, _, err = run(
            capsys, ["infer", "--image", str(tmp_path / "missing.png"), *DESK32]
        )
        assert code == 2
        assert "error" in err
