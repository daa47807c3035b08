"""Patch-based active learning on 3D volumes.

A self-contained engine covering the full loop: ensemble uncertainty maps,
summed-area-table patch aggregation, overlap-constrained and stochastic
query selection, foreground-aware random baselines, a desk-scale synthetic
learner, and an annotation-efficiency evaluation suite.
"""

from .aggregate import ScoreField, SummedAreaTable3D, build_sat, window_mean
from .config import ExperimentConfig, LabelRegime, METHODS
from .metrics import (
    BudgetCurve,
    FgEffInput,
    PpmResult,
    aubc,
    dice_per_image,
    fit_fg_eff,
    kendall_tau,
    ppm,
    welch_t_test,
)
from .query import (
    Candidate,
    NoiseSpec,
    Query,
    fg_aware_query,
    global_select,
    perturb_scores,
    random_query,
    select_image_patches,
    starting_budget,
)
from .uncertainty import UncertaintyMap, bald, expected_entropy, predictive_entropy
from .volumes import (
    UNLABELED,
    AnnotationMask,
    EnsembleProbabilityStack,
    LabelVolume,
    PatchBox,
    Volume3D,
    clamp_patch,
    overlap_fraction,
    read_volume,
    union_annotation,
    write_volume,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotationMask",
    "BudgetCurve",
    "Candidate",
    "EnsembleProbabilityStack",
    "ExperimentConfig",
    "FgEffInput",
    "LabelRegime",
    "LabelVolume",
    "METHODS",
    "NoiseSpec",
    "PatchBox",
    "PpmResult",
    "Query",
    "ScoreField",
    "SummedAreaTable3D",
    "UNLABELED",
    "UncertaintyMap",
    "Volume3D",
    "aubc",
    "bald",
    "build_sat",
    "clamp_patch",
    "dice_per_image",
    "expected_entropy",
    "fg_aware_query",
    "fit_fg_eff",
    "global_select",
    "kendall_tau",
    "overlap_fraction",
    "perturb_scores",
    "ppm",
    "predictive_entropy",
    "random_query",
    "read_volume",
    "select_image_patches",
    "starting_budget",
    "union_annotation",
    "welch_t_test",
    "window_mean",
    "write_volume",
]
