import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from cam_exporter.errors import ImageDecodeFailure, ModelLoadFailure
from cam_exporter.export import CAM, GRAD_CAM, ExportJob, export
from cam_exporter.model import load_model, make_color_prototype_model, save_model

from conftest import CLASS_COLORS, CLASS_NAMES


class TestModel:
    def test_load_round_trip(self, model_path):
        model = load_model(model_path)
        assert model.class_names == CLASS_NAMES
        assert model.pooling == "gap"
        assert model.num_classes == 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelLoadFailure):
            load_model(tmp_path / "nope.npz")

    def test_malformed_shapes_rejected(self, tmp_path):
        save_model(
            tmp_path / "bad.npz",
            np.zeros((2, 3, 3, 3)),
            np.zeros((3, 5)),  # wrong filter count
            np.zeros(3),
            "gap",
            1,
            CLASS_NAMES,
            CLASS_COLORS,
        )
        with pytest.raises(ModelLoadFailure):
            load_model(tmp_path / "bad.npz")

    def test_color_prototype_scores(self, model_path):
        model = load_model(model_path)
        red = np.zeros((32, 32, 3))
        red[:, :] = np.array(CLASS_COLORS[0]) / 255.0
        feats = model.features(red)
        scores = model.scores(feats)
        assert np.argmax(scores) == 0

    def test_grad_cam_is_relu_of_cam_scaled(self, model_path):
        model = load_model(model_path)
        rng = np.random.default_rng(0)
        feats = model.features(rng.uniform(0, 1, (40, 40, 3)))
        cam = model.cam(feats)
        gcam = model.grad_cam(feats)
        p = feats.shape[1] * feats.shape[2]
        np.testing.assert_allclose(gcam, np.maximum(cam, 0) / p, atol=1e-12)


class TestExport:
    def test_header_matches_job(self, model_path, sample_images, tmp_path):
        job = ExportJob(model_path, sample_images, tmp_path / "out", output_size=(48, 56))
        export(job)
        for image_path in sample_images:
            raw = (tmp_path / "out" / f"{Path(image_path).stem}.wsas").read_bytes()
            magic, version, c, h, w = struct.unpack_from("<4sIIII", raw)
            assert magic == b"WSAS" and version == 1
            assert (c, h, w) == (3, 48, 56)
            assert len(raw) == 20 + 4 * c + 4 * c * h * w

    def test_maps_min_max_scaled(self, model_path, sample_images, tmp_path):
        job = ExportJob(model_path, sample_images, tmp_path / "out", output_size=(32, 32))
        export(job)
        raw = (tmp_path / "out" / "img0.wsas").read_bytes()
        maps = np.frombuffer(raw, dtype="<f4", offset=20 + 12).reshape(3, 32, 32)
        for m in maps:
            assert m.min() >= 0.0 and m.max() <= 1.0
            assert m.max() in (0.0, pytest.approx(1.0))

    def test_deterministic_export(self, model_path, sample_images, tmp_path):
        def digest(root):
            h = hashlib.sha256()
            for p in sorted(Path(root).rglob("*")):
                if p.is_file():
                    h.update(p.name.encode())
                    h.update(p.read_bytes())
            return h.hexdigest()

        job_a = ExportJob(model_path, sample_images, tmp_path / "a", output_size=(32, 32))
        job_b = ExportJob(model_path, sample_images, tmp_path / "b", output_size=(32, 32))
        export(job_a)
        export(job_b)
        assert digest(tmp_path / "a") == digest(tmp_path / "b")

    def test_target_class_subset(self, model_path, sample_images, tmp_path):
        job = ExportJob(
            model_path,
            sample_images,
            tmp_path / "out",
            target_classes=("red_zone", "blue_zone"),
            output_size=(16, 16),
        )
        export(job)
        doc = json.loads((tmp_path / "out" / "taxonomy.json").read_text())
        assert [c["name"] for c in doc["classes"]] == ["red_zone", "blue_zone"]
        raw = (tmp_path / "out" / "img0.wsas").read_bytes()
        assert struct.unpack_from("<I", raw, 8)[0] == 2

    def test_unknown_target_rejected(self, model_path, sample_images, tmp_path):
        job = ExportJob(model_path, sample_images, tmp_path / "out", target_classes=("nope",))
        with pytest.raises(ValueError):
            export(job)

    def test_bad_image_raises(self, model_path, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        job = ExportJob(model_path, (bad,), tmp_path / "out")
        with pytest.raises(ImageDecodeFailure):
            export(job)

    def test_known_labels_override_predictions(self, model_path, sample_images, tmp_path):
        job = ExportJob(
            model_path,
            sample_images,
            tmp_path / "out",
            output_size=(16, 16),
            known_labels={"img0": ["green_zone"]},
        )
        export(job)
        doc = json.loads((tmp_path / "out" / "manifest.json").read_text())
        by_id = {e["id"]: e for e in doc["images"]}
        assert by_id["img0"]["labels"] == ["green_zone"]


class TestPrimaryRoundTrip:
    """Acceptance: exported files must pass the consuming toolkit's validation.
    Only the tests import the primary package; the exporter itself never does."""

    def test_read_stack_accepts_exports(self, model_path, sample_images, tmp_path):
        from wsseg.formats import read_manifest, read_stack

        job = ExportJob(model_path, sample_images, tmp_path / "out", output_size=(40, 48))
        manifest_path = export(job)
        manifest = read_manifest(manifest_path)
        taxonomy = manifest.load_taxonomy()
        assert taxonomy.names == CLASS_NAMES
        assert len(manifest.images) == len(sample_images)
        for entry in manifest.images:
            stack = read_stack(manifest.resolve(entry.stack), entry.id)
            assert stack.maps.shape == (3, 40, 48)
            assert (stack.confidences >= 0).all() and (stack.confidences <= 1).all()

    def test_constant_model_maps_normalize_to_zero(self, sample_images, tmp_path):
        from wsseg.core import normalize_stack
        from wsseg.formats import read_stack

        # constant filters and equal head weights make every map flat
        save_model(
            tmp_path / "flat.npz",
            np.zeros((2, 3, 3, 3)),
            np.ones((3, 2)),
            np.zeros(3),
            "gap",
            2,
            CLASS_NAMES,
            CLASS_COLORS,
        )
        job = ExportJob(tmp_path / "flat.npz", sample_images, tmp_path / "out", output_size=(16, 16))
        export(job)
        stack = read_stack(tmp_path / "out" / "img0.wsas")
        norm = normalize_stack(stack)
        assert (norm.maps == 0).all()

    def test_argmax_region_overlaps_object(self, model_path, tmp_path):
        # single-object smoke check: one prototype-colored square on a dark field
        from wsseg.formats import read_stack

        img = np.full((64, 64, 3), 10, dtype=np.uint8)
        img[8:28, 8:28] = CLASS_COLORS[0]
        path = tmp_path / "obj.png"
        Image.fromarray(img).save(path)
        job = ExportJob(model_path, (path,), tmp_path / "out", output_size=(64, 64), cam_mode=CAM)
        export(job)
        stack = read_stack(tmp_path / "out" / "obj.wsas")
        red_map = stack.maps[0]
        peak = np.unravel_index(np.argmax(red_map), red_map.shape)
        assert 4 <= peak[0] <= 32 and 4 <= peak[1] <= 32


class TestCli:
    def test_cli_export(self, model_path, sample_images, tmp_path, capsys):
        from cam_exporter.cli import main

        code = main(
            [
                "--model",
                str(model_path),
                "--images",
                *[str(p) for p in sample_images],
                "--out",
                str(tmp_path / "out"),
                "--size",
                "32x32",
                "--mode",
                "cam",
            ]
        )
        assert code == 0
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_cli_bad_size(self, model_path, capsys):
        from cam_exporter.cli import main

        assert main(["--model", str(model_path), "--images", "x.png", "--out", "o", "--size", "big"]) == 1

    def test_cli_model_error_is_data_error(self, tmp_path, sample_images):
        from cam_exporter.cli import main

        code = main(
            [
                "--model",
                str(tmp_path / "missing.npz"),
                "--images",
                *[str(p) for p in sample_images],
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == 2
