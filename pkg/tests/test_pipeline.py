import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from wsseg.core import UNLABELED, BackgroundMode, ClassTaxonomy, normalize_stack
from wsseg.crf import CrfParams
from wsseg.errors import MissingAuxiliaryInputError, WssegError
from wsseg.formats import png_to_mask, read_manifest, read_stack
from wsseg.metrics import EvalAccumulator
from wsseg.pipeline import (
    PipelineName,
    PipelineSpec,
    make_synthetic_fixture,
    process_image,
    run_pipeline,
    seed_probability_field,
)
from wsseg.propagate import GrowPolicy, WalkPolicy
from wsseg.seeds import SeedPolicy, ThresholdMode


def tree_digest(root):
    digest = hashlib.sha256()
    for path in sorted(Path(root).rglob("*")):
        if path.is_file():
            digest.update(path.name.encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


class TestFixture:
    def test_clean_fixture_baseline_is_perfect(self, tmp_path, taxonomy3):
        manifest = make_synthetic_fixture(
            tmp_path / "clean", n_images=3, n_classes=3, size=24, noise=0.0, activation_blur=0.0, seed=1
        )
        result = run_pipeline(PipelineSpec(), manifest, tmp_path / "out")
        assert result.aggregate.miou == 1.0

    def test_fixed_seed_byte_identical(self, tmp_path):
        make_synthetic_fixture(tmp_path / "a", n_images=3, n_classes=3, size=16, seed=9)
        make_synthetic_fixture(tmp_path / "b", n_images=3, n_classes=3, size=16, seed=9)
        assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")

    def test_different_seed_differs(self, tmp_path):
        make_synthetic_fixture(tmp_path / "a", n_images=2, n_classes=3, size=16, seed=1)
        make_synthetic_fixture(tmp_path / "b", n_images=2, n_classes=3, size=16, seed=2)
        assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "b")

    def test_noisy_baseline_matches_reeval(self, blob_fixture, tmp_path):
        # rerun the metrics over the written masks: report must agree
        result = run_pipeline(PipelineSpec(), blob_fixture, tmp_path / "out")
        taxonomy = blob_fixture.load_taxonomy()
        acc = EvalAccumulator(taxonomy)
        for entry in blob_fixture.images:
            pred = png_to_mask(tmp_path / "out" / "masks" / f"{entry.id}.png", taxonomy)
            gt = png_to_mask(blob_fixture.resolve(entry.gt_mask), taxonomy)
            acc.add(pred, gt)
        assert acc.report().miou == result.aggregate.miou

    def test_manifest_labels_match_gt(self, blob_fixture):
        taxonomy = blob_fixture.load_taxonomy()
        for entry in blob_fixture.images:
            gt = png_to_mask(blob_fixture.resolve(entry.gt_mask), taxonomy)
            present = {taxonomy.names[c] for c in np.unique(gt.labels)}
            assert set(entry.labels) == present

    def test_stacks_pass_validation(self, blob_fixture):
        for entry in blob_fixture.images:
            stack = read_stack(blob_fixture.resolve(entry.stack), entry.id)
            assert stack.maps.min() >= 0.0 and stack.maps.max() <= 1.0


class TestSeedField:
    def test_seeded_and_unseeded_pixels(self):
        from wsseg.core import LabelMask

        seeds = LabelMask(np.array([[0, UNLABELED]]))
        field = seed_probability_field(seeds, 3, strength=0.9)
        np.testing.assert_allclose(field.probs[:, 0, 0], [0.9, 0.05, 0.05])
        np.testing.assert_allclose(field.probs[:, 0, 1], [1 / 3] * 3)


class TestPipelines:
    def test_spec_invariants(self):
        with pytest.raises(WssegError):
            PipelineSpec(PipelineName.HISTOSEGNET)  # needs crf params
        with pytest.raises(WssegError):
            PipelineSpec(PipelineName.IRN_SEEDS_AND_WALK)  # needs walk policy
        with pytest.raises(WssegError):
            PipelineSpec(PipelineName.DSRG_SEEDS)  # needs grow policy

    def test_sec_writes_seeds_and_coverage(self, blob_fixture, tmp_path):
        spec = PipelineSpec(PipelineName.SEC_SEEDS, seed_policy=SeedPolicy(fg_threshold=0.5))
        result = run_pipeline(spec, blob_fixture, tmp_path / "out")
        taxonomy = blob_fixture.load_taxonomy()
        for entry, doc in zip(blob_fixture.images, result.per_image):
            seeds = png_to_mask(tmp_path / "out" / "seeds" / f"{entry.id}.png", taxonomy)
            assert doc["seed_coverage"] == float((seeds.labels != UNLABELED).mean())

    def test_dsrg_grows_seed_coverage(self, blob_fixture, tmp_path):
        policy = SeedPolicy(fg_threshold=0.9)
        sec = run_pipeline(
            PipelineSpec(PipelineName.SEC_SEEDS, seed_policy=policy),
            blob_fixture,
            tmp_path / "sec",
        )
        dsrg = run_pipeline(
            PipelineSpec(
                PipelineName.DSRG_SEEDS, seed_policy=policy, grow_policy=GrowPolicy(0.05)
            ),
            blob_fixture,
            tmp_path / "dsrg",
        )
        sec_cov = np.mean([d["seed_coverage"] for d in sec.per_image])
        dsrg_cov = np.mean([d["seed_coverage"] for d in dsrg.per_image])
        assert dsrg_cov >= sec_cov

    def test_irn_end_to_end(self, blob_fixture, tmp_path):
        spec = PipelineSpec(
            PipelineName.IRN_SEEDS_AND_WALK,
            walk_policy=WalkPolicy(steps=8, radius=1),
            crf_params=CrfParams(iterations=2),
        )
        result = run_pipeline(spec, blob_fixture, tmp_path / "out")
        assert result.aggregate is not None
        assert (tmp_path / "out" / "masks").exists()
        assert result.aggregate.miou > 0.3  # sanity: far better than random

    def test_histosegnet_zero_pairwise_identity_chain(self, tmp_path):
        # when the stack argmax already matches gt and the CRF has no pairwise
        # terms, the whole chain is the identity: mIoU exactly 1
        manifest = make_synthetic_fixture(
            tmp_path / "clean", n_images=2, n_classes=3, size=16, noise=0.0, activation_blur=0.0, seed=4
        )
        spec = PipelineSpec(
            PipelineName.HISTOSEGNET,
            crf_params=CrfParams(iterations=2, appearance_weight=0.0, smoothness_weight=0.0),
        )
        result = run_pipeline(spec, manifest, tmp_path / "out")
        assert result.aggregate.miou == 1.0

    def test_histosegnet_beats_baseline(self, blob_fixture, tmp_path):
        baseline = run_pipeline(PipelineSpec(), blob_fixture, tmp_path / "base")
        hsn = run_pipeline(
            PipelineSpec(PipelineName.HISTOSEGNET, crf_params=CrfParams(iterations=5)),
            blob_fixture,
            tmp_path / "hsn",
        )
        assert hsn.aggregate.miou > baseline.aggregate.miou

    def test_run_deterministic_and_parallel_identical(self, blob_fixture, tmp_path):
        spec = PipelineSpec(PipelineName.HISTOSEGNET, crf_params=CrfParams(iterations=2))
        run_pipeline(spec, blob_fixture, tmp_path / "r1")
        run_pipeline(spec, blob_fixture, tmp_path / "r2")
        run_pipeline(spec, blob_fixture, tmp_path / "r4", jobs=4)
        assert tree_digest(tmp_path / "r1") == tree_digest(tmp_path / "r2")
        assert tree_digest(tmp_path / "r1") == tree_digest(tmp_path / "r4")

    def test_missing_rgb_raises(self, blob_fixture, tmp_path):
        from wsseg.formats import Manifest, ManifestImage

        stripped = Manifest(
            tuple(
                ManifestImage(e.id, e.stack, e.labels, gt_mask=e.gt_mask)
                for e in blob_fixture.images
            ),
            blob_fixture.taxonomy,
            blob_fixture.root,
        )
        spec = PipelineSpec(PipelineName.HISTOSEGNET, crf_params=CrfParams(iterations=1))
        with pytest.raises(MissingAuxiliaryInputError):
            run_pipeline(spec, stripped, tmp_path / "out")

    def test_report_written(self, blob_fixture, tmp_path):
        run_pipeline(PipelineSpec(), blob_fixture, tmp_path / "out")
        doc = json.loads((tmp_path / "out" / "report.json").read_text())
        assert doc["pipeline"] == "baseline"
        assert "aggregate" in doc
        assert (tmp_path / "out" / "report.txt").exists()

    def test_composites_written(self, blob_fixture, tmp_path):
        run_pipeline(PipelineSpec(), blob_fixture, tmp_path / "out", composites=True)
        comps = list((tmp_path / "out" / "composites").glob("*.png"))
        assert len(comps) == len(blob_fixture.images)

    def test_adp_style_background_and_other_chain(self, tmp_path, taxonomy_bg_other):
        # four vertical bands: glands color, muscle color, white, dark gray;
        # the white band must become background, the gray band "other"
        from PIL import Image

        from wsseg.core import ActivationStack, LabelMask
        from wsseg.formats import (
            Manifest,
            ManifestImage,
            mask_to_png,
            write_manifest,
            write_stack,
            write_taxonomy,
        )
        from wsseg.seeds import BackgroundSource, SeedPolicy

        root = tmp_path / "adp"
        root.mkdir()
        write_taxonomy(taxonomy_bg_other, root / "taxonomy.json")
        h = w = 32
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
        rgb[:, :10] = (228, 26, 28)
        rgb[:, 10:20] = (55, 126, 184)
        rgb[:, 20:26] = (255, 255, 255)
        rgb[:, 26:] = (90, 90, 90)
        Image.fromarray(rgb).save(root / "x_rgb.png")
        gt = np.zeros((h, w), dtype=np.uint8)
        gt[:, 10:20] = 1
        gt[:, 20:26] = 2
        gt[:, 26:] = 3
        mask_to_png(LabelMask(gt), taxonomy_bg_other, root / "x_gt.png")
        maps = np.zeros((2, h, w))
        maps[0, :, :10] = 1.0
        maps[1, :, 10:20] = 1.0
        write_stack(ActivationStack(maps, np.ones(2), "x"), root / "x.wsas")
        manifest = Manifest(
            (
                ManifestImage(
                    "x", "x.wsas", ("glands", "muscle"), gt_mask="x_gt.png", rgb="x_rgb.png"
                ),
            ),
            "taxonomy.json",
            root,
        )
        write_manifest(manifest, root / "manifest.json")
        spec = PipelineSpec(
            PipelineName.HISTOSEGNET,
            seed_policy=SeedPolicy(bg_source=BackgroundSource.WHITE_LEVEL, blur_sigma=1.0),
            crf_params=CrfParams(iterations=5),
        )
        result = run_pipeline(spec, manifest, tmp_path / "out")
        assert result.aggregate.miou > 0.9
        pred = png_to_mask(tmp_path / "out" / "masks" / "x.png", taxonomy_bg_other)
        assert pred.labels[16, 22] == 2  # white band -> background
        assert pred.labels[16, 29] == 3  # dark band -> other
        assert (tmp_path / "out" / "report.csv").exists()

    def test_no_other_flag_disables_synthesis(self, tmp_path, taxonomy_bg_other):
        from wsseg.core import ActivationStack
        from wsseg.pipeline import _Aux, assemble_full_stack
        from wsseg.seeds import BackgroundSource, SeedPolicy

        maps = np.zeros((2, 4, 4))
        stack = ActivationStack(maps, np.ones(2), "x")
        aux = _Aux(rgb=np.full((4, 4, 3), 255.0))
        policy = SeedPolicy(bg_source=BackgroundSource.WHITE_LEVEL)
        on = assemble_full_stack(
            stack, taxonomy_bg_other, PipelineSpec(seed_policy=policy), aux
        )
        off = assemble_full_stack(
            stack,
            taxonomy_bg_other,
            PipelineSpec(seed_policy=policy, synthesize_other_map=False),
            aux,
        )
        other = taxonomy_bg_other.other_index
        assert on.maps[other].max() > 0
        assert off.maps[other].max() == 0

    def test_upsample_to_gt(self, tmp_path):
        # half-resolution stack vs full-resolution gt
        from PIL import Image

        from wsseg.core import ActivationStack, LabelMask
        from wsseg.formats import (
            Manifest,
            ManifestImage,
            mask_to_png,
            write_manifest,
            write_stack,
            write_taxonomy,
        )

        taxonomy = ClassTaxonomy((("a", (255, 0, 0)), ("b", (0, 0, 255))), BackgroundMode.NONE)
        root = tmp_path / "half"
        root.mkdir()
        write_taxonomy(taxonomy, root / "taxonomy.json")
        gt = np.zeros((8, 8), dtype=np.uint8)
        gt[:, 4:] = 1
        mask_to_png(LabelMask(gt), taxonomy, root / "gt.png")
        maps = np.zeros((2, 4, 4))
        maps[0, :, :2] = 1.0
        maps[1, :, 2:] = 1.0
        write_stack(ActivationStack(maps, np.ones(2), "x"), root / "x.wsas")
        manifest = Manifest(
            (ManifestImage("x", "x.wsas", ("a", "b"), gt_mask="gt.png"),),
            "taxonomy.json",
            root,
        )
        with pytest.raises(WssegError):
            run_pipeline(PipelineSpec(), manifest, tmp_path / "fail")
        result = run_pipeline(
            PipelineSpec(upsample_to_gt=True), manifest, tmp_path / "ok"
        )
        assert result.aggregate.miou == 1.0
