"""wsseg: turn coarse class-activation stacks into pixel-level segmentation
proposals (seeding, region growing, random-walk propagation, dense-CRF
refinement) and evaluate them."""

from .core import (
    UNLABELED,
    ActivationStack,
    BackgroundMode,
    BoundaryMap,
    ClassTaxonomy,
    LabelMask,
    ProbabilityField,
    normalize_stack,
)
from .formats import (
    Manifest,
    ManifestImage,
    mask_to_png,
    png_to_mask,
    read_manifest,
    read_stack,
    read_taxonomy,
    write_manifest,
    write_stack,
    write_taxonomy,
)
from .seeds import (
    BackgroundSource,
    OverlapRule,
    SeedPolicy,
    ThresholdMode,
    coverage_target_search,
    generate_seeds,
    resolve_overlaps,
    synthesize_background_lowest,
    synthesize_background_white,
    threshold_class,
)
from .adjust import subtract_classes, synthesize_other
from .propagate import (
    FeatureSource,
    GrowPolicy,
    WalkPolicy,
    build_transition,
    random_walk,
    region_grow,
)
from .crf import CrfMode, CrfParams, argmax_labels, build_unary, mean_field
from .metrics import (
    Connectivity,
    CooccurrenceMatrix,
    EvalAccumulator,
    EvalReport,
    cooccurrence,
    coverage,
    instance_count,
    mean_recall,
    miou,
)
from .analysis import (
    advise_method,
    advise_sparseness,
    balance_dataset,
    sweep_thresholds,
)
from .pipeline import (
    PipelineName,
    PipelineSpec,
    make_synthetic_fixture,
    run_pipeline,
)

__version__ = "0.1.0"
