import dataclasses
import json
import os

import numpy as np
import pytest
import torch
from click.testing import CliRunner

from conftest import tiny_model_config
from rirci import imaging, train as train_mod
from rirci.cli import main as cli_main
from rirci.config import TrainConfig, apply_overrides, load_config
from rirci.data import ManifestDataset, batch_iterator
from rirci.evaluate import evaluate
from rirci.infer import INTERMEDIATE_PANELS, remove_watermark, run_model_on_image
from rirci.model import (CheckpointMismatchError, RirciModel, load_checkpoint,
                         save_checkpoint)
from rirci.train import TrainingDiverged, train


def small_cfg(manifest, out_dir, **kw):
    base = dict(
        manifest=str(manifest), out_dir=str(out_dir), epochs=1, batch_size=4,
        max_steps=2, val_fraction=0.2, seed=3,
        stage1_widths=(8, 12, 16, 24, 32), stage2_base_width=8,
        glci_blocks=2, local_block=(2, 2), global_grid=(2, 2),
        refinement_steps=2, perceptual_width_scale=0.125)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults_match_training_settings(self):
        cfg = TrainConfig()
        assert cfg.epochs == 100 and cfg.batch_size == 8
        assert cfg.learning_rate == 0.001
        assert (cfg.adam_beta1, cfg.adam_beta2) == (0.9, 0.999)
        assert (cfg.lambda1, cfg.lambda2, cfg.lambda3) == (2.0, 1.0, 3.0)
        assert cfg.gamma == 1.5 and cfg.alpha_threshold == 0.75

    def test_ini_file_loading(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[rirci]\nepochs = 7\nlearning_rate = 0.01\n"
                        "two_phase = true\nstage1_widths = 8 12 16 24 32\n")
        cfg = load_config(path)
        assert cfg.epochs == 7 and cfg.learning_rate == 0.01
        assert cfg.two_phase is True
        assert cfg.stage1_widths == (8, 12, 16, 24, 32)

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[rirci]\nepochs = 7\n")
        cfg = load_config(path, overrides={"epochs": 3, "seed": None})
        assert cfg.epochs == 3
        assert cfg.seed == 0  # None overrides are ignored

    def test_env_seed_beats_everything(self, tmp_path, monkeypatch):
        path = tmp_path / "run.ini"
        path.write_text("[rirci]\nseed = 5\n")
        monkeypatch.setenv("RIRCI_SEED", "99")
        cfg = load_config(path, overrides={"seed": 42})
        assert cfg.seed == 99

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "run.ini"
        path.write_text("[rirci]\nnot_a_key = 1\n")
        with pytest.raises(KeyError):
            load_config(path)
        with pytest.raises(KeyError):
            apply_overrides(TrainConfig(), {"nope": 1})

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.ini")

    def test_invalid_variant_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(variant=5)

    def test_model_config_reflects_scale_fields(self, tmp_path):
        cfg = small_cfg("m", tmp_path, variant=3)
        mc = cfg.model_config()
        assert mc.stage1.widths == (8, 12, 16, 24, 32)
        assert mc.stage2.only_restoration


class TestData:
    def test_dataset_tensors(self, tiny_dataset):
        ds = ManifestDataset(tiny_dataset, split="train")
        assert len(ds) == 12
        item = ds[0]
        for key, ch in (("J", 3), ("I", 3), ("C_w", 3), ("C_b", 3),
                        ("A", 1), ("M", 1)):
            assert item[key].shape == (1, ch, 32, 32)
        # the compositing identity survives storage
        resid = (item["J"] - item["C_w"] - item["C_b"]).abs().max()
        assert float(resid) <= 1.0 / 255.0 + 1e-3

    def test_batch_order_is_seeded(self, tiny_dataset):
        ds = ManifestDataset(tiny_dataset, split="train")
        idx = list(range(len(ds)))
        order = lambda seed, epoch: [ids for ids, _ in
                                     batch_iterator(ds, idx, 4, seed, epoch)]
        assert order(1, 0) == order(1, 0)
        assert order(1, 0) != order(1, 1)
        assert order(1, 0) != order(2, 0)

    def test_split_is_deterministic_and_disjoint(self, tiny_dataset):
        ds = ManifestDataset(tiny_dataset, split="train")
        tr1, va1 = ds.split_indices(0.25, seed=5)
        tr2, va2 = ds.split_indices(0.25, seed=5)
        assert (tr1, va1) == (tr2, va2)
        assert not set(tr1) & set(va1)
        assert len(tr1) + len(va1) == len(ds)


class TestTraining:
    def test_smoke_run_writes_artifacts(self, tiny_dataset, tmp_path):
        record, best = train(small_cfg(tiny_dataset, tmp_path / "run"))
        assert best.exists()
        assert (tmp_path / "run" / "last.pt").exists()
        assert len(record.steps) == 2
        for step in record.steps:
            assert all(np.isfinite(step[k]) for k in
                       ("L", "L_b", "L_r", "L_i", "L_f", "L_m"))
        payload = json.loads((tmp_path / "run" / "run_record.json").read_text())
        assert payload["config"]["seed"] == 3
        assert payload["source_fingerprint"]

    def test_deterministic_given_seed(self, tiny_dataset, tmp_path):
        r1, _ = train(small_cfg(tiny_dataset, tmp_path / "a", max_steps=3))
        r2, _ = train(small_cfg(tiny_dataset, tmp_path / "b", max_steps=3))
        for s1, s2 in zip(r1.steps, r2.steps):
            assert round(s1["L"], 6) == round(s2["L"], 6)

    def test_different_seed_diverges(self, tiny_dataset, tmp_path):
        r1, _ = train(small_cfg(tiny_dataset, tmp_path / "a"))
        r2, _ = train(small_cfg(tiny_dataset, tmp_path / "b", seed=4))
        assert r1.steps[0]["L"] != r2.steps[0]["L"]

    def test_divergence_reports_batch_ids(self, tiny_dataset, tmp_path,
                                          monkeypatch):
        def bad_loss(batch, s1, s2, w, extractor):
            t = torch.tensor(float("nan"), requires_grad=True)
            return t, {"L": float("nan")}
        monkeypatch.setattr(train_mod, "total_loss", bad_loss)
        with pytest.raises(TrainingDiverged) as err:
            train(small_cfg(tiny_dataset, tmp_path / "run"))
        assert err.value.step == 0
        assert len(err.value.batch_ids) > 0
        # the partial run record is still written
        assert (tmp_path / "run" / "run_record.json").exists()

    def test_two_phase_freezes_stage1(self, tiny_dataset, tmp_path):
        cfg = small_cfg(tiny_dataset, tmp_path / "run", epochs=2,
                        two_phase=True, max_steps=1)
        record, best = train(cfg)
        assert best.exists()
        # phase 1 logs only exclusion-stage terms; phase 2 uses the full
        # objective
        assert len(record.steps) == 2
        assert record.steps[0]["L_f"] == 0.0 and record.steps[0]["L_r"] == 0.0
        assert record.steps[-1]["L_f"] != 0.0

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            train(small_cfg("", tmp_path))


class TestCheckpoints:
    def test_round_trip_bit_identical(self, tmp_path):
        model = RirciModel(tiny_model_config())
        path = tmp_path / "ckpt.pt"
        save_checkpoint(model, path, extra={"note": 1})
        loaded, extra = load_checkpoint(path, expected=model.cfg)
        assert extra == {"note": 1}
        x = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            model.eval()
            _, a = model(x)
            _, b = loaded(x)
        assert torch.equal(a.fused, b.fused)

    def test_fingerprint_mismatch_refused(self, tmp_path):
        model = RirciModel(tiny_model_config())
        path = tmp_path / "ckpt.pt"
        save_checkpoint(model, path)
        other = dataclasses.replace(tiny_model_config(), detach_stage1=True)
        with pytest.raises(CheckpointMismatchError) as err:
            load_checkpoint(path, expected=other)
        assert "expected" in str(err.value)


class TestEvaluate:
    def test_oracle_mode_perfect_scores(self, tiny_dataset, tmp_path):
        model = RirciModel(tiny_model_config())
        report, rows = evaluate(model, tiny_dataset, split="train",
                                out_dir=tmp_path, oracle_mode=True,
                                buckets=True)
        assert report.psnr == 100.0
        assert report.ssim == pytest.approx(1.0, abs=1e-9)
        assert report.rmse == 0.0 and report.rmse_w == 0.0
        assert report.f1 == 1.0 and report.iou == 1.0
        assert report.sample_count == 12
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "per_sample.csv").exists()
        payload = json.loads((tmp_path / "report.json").read_text())
        assert "psnr_by_opacity" in payload

    def test_model_evaluation_finite(self, tiny_dataset):
        model = RirciModel(tiny_model_config())
        report, rows = evaluate(model, tiny_dataset, split="train")
        assert np.isfinite(report.psnr) and np.isfinite(report.rmse)
        assert all("opacity" in r and "id" in r for r in rows)

    def test_empty_split_rejected(self, tiny_dataset):
        model = RirciModel(tiny_model_config())
        with pytest.raises(ValueError):
            evaluate(model, tiny_dataset, split="test")

    def test_checkpoint_evaluation_reproducible(self, tiny_dataset, tmp_path):
        model = RirciModel(tiny_model_config())
        path = tmp_path / "ckpt.pt"
        save_checkpoint(model, path)
        r1, _ = evaluate(path, tiny_dataset, split="train")
        r2, _ = evaluate(path, tiny_dataset, split="train")
        assert r1.to_dict() == r2.to_dict()


class TestInference:
    def test_non_multiple_of_16_image(self, tmp_path):
        model = RirciModel(tiny_model_config())
        img = np.random.default_rng(0).random((50, 70, 3)).astype(np.float32)
        out = run_model_on_image(model, img)
        assert set(out) == set(INTERMEDIATE_PANELS)
        assert out["fused"].shape == (50, 70, 3)
        assert out["mask"].shape == (50, 70, 1)

    def test_remove_watermark_writes_outputs(self, tmp_path):
        model = RirciModel(tiny_model_config())
        src = tmp_path / "in.png"
        rng = np.random.default_rng(1)
        imaging.save_image(rng.random((48, 48, 3)).astype(np.float32), src)
        dst = tmp_path / "out.png"
        remove_watermark(model, src, dst, dump_intermediates=True)
        assert dst.exists()
        grid = tmp_path / "out_intermediates.png"
        assert grid.exists()
        g, _ = imaging.load_image(grid)
        assert g.shape == (96, 144, 3)  # 2x3 grid of 48x48 panels

    def test_single_path_variant_inference(self):
        model = RirciModel(tiny_model_config(only_restoration=True))
        img = np.random.default_rng(2).random((32, 32, 3)).astype(np.float32)
        out = run_model_on_image(model, img)
        assert np.array_equal(out["imagined"], out["fused"])


class TestCli:
    def test_selftest_command(self):
        result = CliRunner().invoke(cli_main, ["selftest"])
        assert result.exit_code == 0, result.output
        assert "[PASS]" in result.output
        assert "[FAIL]" not in result.output

    def test_synthesize_command(self, asset_dirs, tmp_path):
        bg, wm = asset_dirs
        result = CliRunner().invoke(cli_main, [
            "synthesize", "--backgrounds", str(bg), "--watermarks", str(wm),
            "--count", "3", "--canvas", "32", "--seed", "1",
            "--opacity-low", "0.2", "--out", str(tmp_path / "ds")])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "ds" / "manifest.json").exists()

    def test_train_and_evaluate_commands(self, tiny_dataset, tmp_path):
        runner = CliRunner()
        ini = tmp_path / "run.ini"
        ini.write_text("[rirci]\nstage1_widths = 8 12 16 24 32\n"
                       "stage2_base_width = 8\nglci_blocks = 2\n"
                       "local_block = 2 2\nglobal_grid = 2 2\n"
                       "refinement_steps = 2\nperceptual_width_scale = 0.125\n"
                       "val_fraction = 0.2\nbatch_size = 4\n")
        result = runner.invoke(cli_main, [
            "train", "--config", str(ini), "--manifest", str(tiny_dataset),
            "--out-dir", str(tmp_path / "run"), "--epochs", "1",
            "--max-steps", "1", "--seed", "2"])
        assert result.exit_code == 0, result.output
        best = json.loads(result.output)["best_checkpoint"]
        result = runner.invoke(cli_main, [
            "evaluate", "--checkpoint", best, "--manifest", str(tiny_dataset),
            "--split", "train", "--oracle", "--buckets"])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["psnr"] == 100.0

    def test_remove_command(self, tmp_path):
        model = RirciModel(tiny_model_config())
        ckpt = tmp_path / "ckpt.pt"
        save_checkpoint(model, ckpt)
        src = tmp_path / "in.png"
        imaging.save_image(
            np.random.default_rng(3).random((32, 32, 3)).astype(np.float32), src)
        result = CliRunner().invoke(cli_main, [
            "remove", "--checkpoint", str(ckpt), "--input", str(src),
            "--output", str(tmp_path / "out.png")])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out.png").exists()

    def test_remove_requires_checkpoint_without_server(self, tmp_path):
        src = tmp_path / "in.png"
        imaging.save_image(np.zeros((16, 16, 3), dtype=np.float32), src)
        result = CliRunner().invoke(cli_main, [
            "remove", "--input", str(src),
            "--output", str(tmp_path / "out.png")])
        assert result.exit_code != 0
