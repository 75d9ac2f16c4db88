import json
from pathlib import Path

import numpy as np
import pytest

from wsseg.cli import main


class TestExitCodes:
    def test_no_command_usage_error(self, capsys):
        assert main([]) == 1

    def test_unknown_subcommand_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_unknown_flag_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["fixture", "--out", "x", "--bogus"])
        assert exc.value.code == 1

    def test_missing_file_is_data_error(self, tmp_path):
        assert main(["run", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2

    def test_bad_config_is_data_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{not json")
        assert (
            main(
                ["run", "--manifest", "m.json", "--out", str(tmp_path), "--config", str(cfg)]
            )
            == 2
        )

    def test_unknown_config_key_is_data_error(self, tmp_path, blob_fixture):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"no-such-key": 1}))
        code = main(
            [
                "run",
                "--manifest",
                str(blob_fixture.root / "manifest.json"),
                "--out",
                str(tmp_path / "out"),
                "--config",
                str(cfg),
            ]
        )
        assert code == 2


class TestFixtureAndRun:
    def test_fixture_then_run_and_eval(self, tmp_path, capsys):
        data = tmp_path / "data"
        assert main(["fixture", "--out", str(data), "--images", "3", "--classes", "3",
                     "--size", "16", "--seed", "5"]) == 0
        out = tmp_path / "out"
        assert main(["run", "--pipeline", "baseline", "--manifest", str(data / "manifest.json"),
                     "--out", str(out)]) == 0
        assert (out / "report.json").exists()
        assert len(list((out / "masks").glob("*.png"))) == 3
        capsys.readouterr()
        gt_dir = tmp_path / "gt"
        gt_dir.mkdir()
        for p in data.glob("*_gt.png"):
            (gt_dir / p.name.replace("_gt", "")).write_bytes(p.read_bytes())
        assert main(["eval", "--pred", str(out / "masks"), "--gt", str(gt_dir),
                     "--taxonomy", str(data / "taxonomy.json"),
                     "--out", str(tmp_path / "report.json"),
                     "--confusion-csv", str(tmp_path / "confusion.csv")]) == 0
        captured = capsys.readouterr()
        assert "mIoU" in captured.out
        doc = json.loads((tmp_path / "report.json").read_text())
        assert 0.0 <= doc["miou"] <= 1.0
        lines = (tmp_path / "confusion.csv").read_text().strip().splitlines()
        assert len(lines) == 4  # header + one row per class

    def test_run_histosegnet_writes_masks(self, blob_fixture, tmp_path):
        out = tmp_path / "hsn"
        code = main(["run", "--pipeline", "histosegnet",
                     "--manifest", str(blob_fixture.root / "manifest.json"),
                     "--out", str(out), "--crf-iterations", "2"])
        assert code == 0
        assert len(list((out / "masks").glob("*.png"))) == len(blob_fixture.images)

    def test_seed_threshold_monotonicity(self, blob_fixture, tmp_path):
        covs = {}
        for thr in ("0.9", "0.2"):
            out = tmp_path / f"s{thr}"
            code = main(["seed", "--manifest", str(blob_fixture.root / "manifest.json"),
                         "--out", str(out), "--strategy", "sec", "--threshold-rel", thr])
            assert code == 0
            doc = json.loads((out / "report.json").read_text())
            covs[thr] = np.mean([d["seed_coverage"] for d in doc["images"]])
        assert covs["0.9"] <= covs["0.2"]

    def test_config_flag_override(self, blob_fixture, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"strategy": "sec", "threshold-rel": 0.9}))
        out_cfg = tmp_path / "from_config"
        assert main(["seed", "--manifest", str(blob_fixture.root / "manifest.json"),
                     "--out", str(out_cfg), "--config", str(cfg)]) == 0
        out_flag = tmp_path / "flag_override"
        assert main(["seed", "--manifest", str(blob_fixture.root / "manifest.json"),
                     "--out", str(out_flag), "--config", str(cfg),
                     "--threshold-rel", "0.2"]) == 0
        cov_cfg = np.mean([d["seed_coverage"]
                           for d in json.loads((out_cfg / "report.json").read_text())["images"]])
        cov_flag = np.mean([d["seed_coverage"]
                            for d in json.loads((out_flag / "report.json").read_text())["images"]])
        assert cov_flag > cov_cfg  # the 0.2 flag must have overridden the 0.9 config

    def test_run_determinism_cli(self, blob_fixture, tmp_path):
        from test_pipeline import tree_digest

        argv = ["run", "--pipeline", "histosegnet",
                "--manifest", str(blob_fixture.root / "manifest.json"),
                "--crf-iterations", "2"]
        assert main(argv + ["--out", str(tmp_path / "a")]) == 0
        assert main(argv + ["--out", str(tmp_path / "b")]) == 0
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


class TestAnalysisCommands:
    def test_sweep_outputs(self, blob_fixture, tmp_path, capsys):
        out = tmp_path / "sweep"
        code = main(["sweep", "--manifest", str(blob_fixture.root / "manifest.json"),
                     "--out", str(out), "--grid", "0.9,0.5,0.2"])
        assert code == 0
        assert (out / "sweep.json").exists()
        assert (out / "sweep.csv").exists()
        assert (out / "sweep.png").exists()
        rows = json.loads((out / "sweep.json").read_text())
        covs = [r["mean_coverage"] for r in rows]
        assert covs == sorted(covs)

    def test_advise_method_and_sparseness(self, blob_fixture, tmp_path, capsys):
        seeds_out = tmp_path / "seeds"
        assert main(["seed", "--manifest", str(blob_fixture.root / "manifest.json"),
                     "--out", str(seeds_out), "--strategy", "sec"]) == 0
        capsys.readouterr()
        assert main(["advise", "--mode", "method",
                     "--manifest", str(blob_fixture.root / "manifest.json"),
                     "--seeds", str(seeds_out / "seeds")]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["recommendation"] in ("self_supervised", "direct_refinement")
        assert main(["advise", "--mode", "sparseness",
                     "--manifest", str(blob_fixture.root / "manifest.json")]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["mean_gt_instances"] > 0

    def test_balance_outputs(self, blob_fixture, tmp_path):
        out = tmp_path / "bal"
        assert main(["balance", "--manifest", str(blob_fixture.root / "manifest.json"),
                     "--out", str(out)]) == 0
        doc = json.loads((out / "cooccurrence.json").read_text())
        n = len(blob_fixture.images)
        assert len(doc["removed"]) == (n + 1) // 2
        before = np.array(doc["before"]["counts"])
        after = np.array(doc["after"]["counts"])
        assert (after <= before).all()
        assert (tmp_path / "bal" / "kept.json").exists()

    def test_grow_and_walk_and_crf_commands(self, blob_fixture, tmp_path):
        manifest_arg = str(blob_fixture.root / "manifest.json")
        seeds_out = tmp_path / "seeds"
        assert main(["seed", "--manifest", manifest_arg, "--out", str(seeds_out),
                     "--strategy", "sec", "--threshold-rel", "0.9"]) == 0
        grown_out = tmp_path / "grown"
        assert main(["grow", "--manifest", manifest_arg, "--seeds", str(seeds_out / "seeds"),
                     "--out", str(grown_out), "--grow-threshold", "0.15"]) == 0
        assert len(list((grown_out / "seeds").glob("*.png"))) == len(blob_fixture.images)
        walk_out = tmp_path / "walk"
        assert main(["walk", "--manifest", manifest_arg, "--out", str(walk_out),
                     "--walk-steps", "4", "--walk-radius", "1"]) == 0
        assert len(list((walk_out / "masks").glob("*.png"))) == len(blob_fixture.images)
        crf_out = tmp_path / "crf"
        assert main(["crf", "--manifest", manifest_arg, "--out", str(crf_out),
                     "--crf-iterations", "2"]) == 0
        assert len(list((crf_out / "masks").glob("*.png"))) == len(blob_fixture.images)

    def test_help_available_everywhere(self, capsys):
        for cmd in ("seed", "grow", "walk", "crf", "run", "eval", "sweep", "advise", "balance", "fixture"):
            with pytest.raises(SystemExit) as exc:
                main([cmd, "--help"])
            assert exc.value.code == 0
            assert "usage" in capsys.readouterr().out
