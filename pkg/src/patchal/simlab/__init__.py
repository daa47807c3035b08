"""Desk-scale stand-in for a full segmentation pipeline.

Provides a synthetic 3D dataset generator and a reference learner (a
bootstrap ensemble of k-NN voxel classifiers) that trains only on
annotated voxels, so active-learning loops can run end to end without a
deep-learning stack.
"""

from .learner import (
    LearnerConfig,
    MemberState,
    TrainedModel,
    labels_from_stack,
    predict_ensemble,
    predict_labels,
    train,
)
from .synthetic import (
    LoadedDataset,
    SyntheticDataset,
    SyntheticSpec,
    fill_box,
    fill_ellipsoid,
    generate_dataset,
    load_dataset,
    write_dataset,
)

__all__ = [
    "LearnerConfig",
    "MemberState",
    "TrainedModel",
    "labels_from_stack",
    "predict_ensemble",
    "predict_labels",
    "train",
    "LoadedDataset",
    "SyntheticDataset",
    "SyntheticSpec",
    "fill_box",
    "fill_ellipsoid",
    "generate_dataset",
    "load_dataset",
    "write_dataset",
]
