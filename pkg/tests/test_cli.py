import json
from pathlib import Path

import numpy as np
import pytest

from volseg.cli import main
from volseg.nn.checkpoint import load_checkpoint, read_checkpoint_extra
from volseg.volume import parse_labels_nifti, parse_nifti

TINY_TOML = """
[model]
image_size = 32
lowres_size = 8
widths = [4, 6, 8]

[train]
batch_size = 2
steps = 3
edit_steps = [0, 1]
"""


def gen(tmp_path, name="data", volumes=2, dims="16,40,40", seed=5):
    out = tmp_path / name
    rc = main([
        "gen-data", "--out", str(out), "--volumes", str(volumes),
        "--dims", dims, "--seed", str(seed),
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    data = gen(tmp)
    cfg = tmp / "tiny.toml"
    cfg.write_text(TINY_TOML)
    ckpt = tmp / "model.ckpt"
    rc = main([
        "train", "--data", str(data / "manifest.json"), "--config", str(cfg),
        "--out", str(ckpt), "--seed", "0",
    ])
    assert rc == 0
    return tmp, data, cfg, ckpt


class TestGenData:
    def test_files_and_manifest(self, tmp_path):
        out = gen(tmp_path, volumes=2)
        files = sorted(p.name for p in out.iterdir())
        assert "manifest.json" in files
        assert sum(f.startswith("vol_") for f in files) == 2
        assert sum(f.startswith("lab_") for f in files) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest) == 2

    def test_same_seed_identical_bytes(self, tmp_path):
        a = gen(tmp_path, "a", seed=9)
        b = gen(tmp_path, "b", seed=9)
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_dims_too_small(self, tmp_path):
        rc = main(["gen-data", "--out", str(tmp_path / "x"), "--volumes", "1",
                   "--dims", "4,6,6", "--seed", "0"])
        assert rc == 1

    def test_volume_and_labels_parse(self, tmp_path):
        out = gen(tmp_path, "parse", volumes=1)
        vol, _ = parse_nifti((out / "vol_000.nii").read_bytes())
        lab, _ = parse_labels_nifti((out / "lab_000.nii").read_bytes())
        assert vol.dims == lab.dims == (16, 40, 40)
        assert lab.labels.max() >= 1


class TestTrain:
    def test_checkpoint_and_metrics(self, workspace):
        tmp, data, cfg, ckpt = workspace
        assert ckpt.exists()
        params, mcfg = load_checkpoint(ckpt.read_bytes())
        assert mcfg.image_size == 32
        metrics = ckpt.with_suffix(".metrics.jsonl").read_text().splitlines()
        assert len(metrics) == 3
        rec = json.loads(metrics[0])
        assert {"step", "loss", "dice_step0"} <= set(rec)

    def test_no_edit_training_drops_field(self, workspace, tmp_path):
        tmp, data, cfg, _ = workspace
        out = tmp_path / "noedit.ckpt"
        rc = main([
            "train", "--data", str(data / "manifest.json"), "--config", str(cfg),
            "--out", str(out), "--no-edit-training",
        ])
        assert rc == 0
        for line in out.with_suffix(".metrics.jsonl").read_text().splitlines():
            assert "dice_after_edits" not in json.loads(line)

    def test_resume_continues_step_counter(self, workspace, tmp_path):
        tmp, data, cfg, ckpt = workspace
        assert read_checkpoint_extra(ckpt.read_bytes())["step"] == 3
        out = tmp_path / "resumed.ckpt"
        rc = main([
            "train", "--data", str(data / "manifest.json"), "--config", str(cfg),
            "--out", str(out), "--resume", str(ckpt),
        ])
        assert rc == 0
        assert read_checkpoint_extra(out.read_bytes())["step"] == 6
        metrics = out.with_suffix(".metrics.jsonl").read_text().splitlines()
        assert json.loads(metrics[0])["step"] == 4

    def test_unknown_config_key_rejected(self, workspace, tmp_path):
        tmp, data, _, _ = workspace
        bad = tmp_path / "bad.toml"
        bad.write_text("[train]\nlearning_rate = 0.1\n")
        rc = main([
            "train", "--data", str(data / "manifest.json"), "--config", str(bad),
            "--out", str(tmp_path / "x.ckpt"),
        ])
        assert rc == 1


class TestEval:
    def test_oracle_backend_perfect(self, workspace, tmp_path):
        tmp, data, _, _ = workspace
        report_path = tmp_path / "report.json"
        rc = main([
            "eval", "--oracle", "--data", str(data / "manifest.json"),
            "--protocol", "volume", "--prompt", "box", "--edits", "0",
            "--report", str(report_path), "--seed", "1",
        ])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert all(row["dice"] == 1.0 for row in report["volumes"])
        assert report_path.with_suffix(".csv").exists()
        figures = report_path.parent / "report_figures"
        assert any(figures.iterdir())

    def test_min_dice_gate(self, workspace, tmp_path):
        tmp, data, _, _ = workspace
        rc = main([
            "eval", "--oracle", "--data", str(data / "manifest.json"),
            "--report", str(tmp_path / "r.json"), "--min-dice", "1.1",
            "--no-figures",
        ])
        assert rc == 1

    def test_bbox_requires_volume_protocol(self, workspace, tmp_path):
        tmp, data, _, _ = workspace
        rc = main([
            "eval", "--oracle", "--data", str(data / "manifest.json"),
            "--protocol", "slice", "--mode", "bbox",
            "--report", str(tmp_path / "r.json"),
        ])
        assert rc == 2

    def test_model_backend_runs(self, workspace, tmp_path):
        tmp, data, _, ckpt = workspace
        report_path = tmp_path / "model_report.json"
        rc = main([
            "eval", "--ckpt", str(ckpt), "--data", str(data / "manifest.json"),
            "--protocol", "slice", "--prompt", "box",
            "--report", str(report_path), "--no-figures", "--seed", "2",
        ])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert len(report["volumes"]) >= 1

    def test_determinism_byte_identical(self, workspace, tmp_path):
        tmp, data, _, _ = workspace
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for path in (a, b):
            rc = main([
                "eval", "--oracle", "--data", str(data / "manifest.json"),
                "--edits", "2", "--report", str(path), "--no-figures", "--seed", "3",
            ])
            assert rc == 0
        assert a.read_bytes() == b.read_bytes()


class TestInfer:
    def test_single_prompt_inference(self, workspace, tmp_path):
        tmp, data, _, ckpt = workspace
        lab, _ = parse_labels_nifti((data / "lab_000.nii").read_bytes())
        zs = np.flatnonzero((lab.labels == 1).any(axis=(1, 2)))
        mid = int(zs[len(zs) // 2])
        prompt_file = tmp_path / "prompt.json"
        prompt_file.write_text(json.dumps({"box": [4, 4, 28, 28]}))
        out = tmp_path / "mask.nii"
        rc = main([
            "infer", "--ckpt", str(ckpt), "--volume", str(data / "vol_000.nii"),
            "--slice", str(mid), "--prompt-json", str(prompt_file),
            "--boundaries", f"{mid},{mid}", "--out", str(out),
        ])
        assert rc == 0
        mask, _ = parse_labels_nifti(out.read_bytes())
        assert mask.dims == (16, 40, 40)
        outside = np.delete(mask.labels, mid, axis=0)
        assert not outside.any()

    def test_slice_outside_boundaries(self, workspace, tmp_path):
        tmp, data, _, ckpt = workspace
        prompt_file = tmp_path / "p.json"
        prompt_file.write_text(json.dumps({"box": [4, 4, 28, 28]}))
        rc = main([
            "infer", "--ckpt", str(ckpt), "--volume", str(data / "vol_000.nii"),
            "--slice", "0", "--prompt-json", str(prompt_file),
            "--boundaries", "5,9", "--out", str(tmp_path / "m.nii"),
        ])
        assert rc == 1


class TestUsage:
    def test_unknown_flag_exit_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--nonsense"])
        assert exc.value.code == 2

    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for cmd in ("gen-data", "train", "eval", "infer", "serve"):
            assert cmd in out
