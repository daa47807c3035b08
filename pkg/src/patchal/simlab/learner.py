"""Reference learner: a bootstrap ensemble of k-NN voxel classifiers.

The learner fits only annotated voxels.  Each ensemble member is a
bootstrap resample (with replacement, same size) of the annotated voxel
set; disagreement between members is the uncertainty source downstream.
Features are the raw intensity, a 3x3x3 mean-smoothed intensity, and the
voxel coordinates normalized to [0, 1].  Intensity features are z-scored
with constants estimated once from the training voxels.

Prediction is exact k-NN by default; ``index="kdtree"`` switches to a
KD-tree for larger sample sets.  Both paths are deterministic for fixed
inputs: candidate neighbors are always ordered by (distance, sample index)
before votes are accumulated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.spatial import cKDTree

from ..errors import NoAnnotation
from ..volumes import (
    AnnotationMask,
    EnsembleProbabilityStack,
    LabelVolume,
    Volume3D,
)

#: Inverse-distance vote weights use w = 1 / (d + DISTANCE_EPS).
DISTANCE_EPS = 1e-6

_QUERY_CHUNK = 16384


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "knn-ensemble"
    ensemble_size: int = 5
    k: int = 3
    use_intensity: bool = True
    use_smoothed: bool = True
    use_coords: bool = True
    training_fraction: float = 1.0
    bootstrap: bool = True
    index: str = "brute"

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.training_fraction <= 1.0:
            raise ValueError("training_fraction must lie in (0, 1]")
        if self.index not in ("brute", "kdtree"):
            raise ValueError(f"unknown index kind {self.index!r}")
        if not (self.use_intensity or self.use_smoothed or self.use_coords):
            raise ValueError("at least one feature group must be enabled")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "ensemble_size": self.ensemble_size,
            "k": self.k,
            "use_intensity": self.use_intensity,
            "use_smoothed": self.use_smoothed,
            "use_coords": self.use_coords,
            "training_fraction": self.training_fraction,
            "bootstrap": self.bootstrap,
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass(frozen=True)
class MemberState:
    """One bootstrap member: normalized features, labels, and provenance.

    ``provenance`` holds (image index, flat voxel index) per sample so the
    annotated-voxels-only guarantee stays checkable after training.
    """

    features: np.ndarray  # (n, f) float64
    labels: np.ndarray  # (n,) uint8
    provenance: np.ndarray  # (n, 2) int64


@dataclass(frozen=True)
class TrainedModel:
    members: tuple[MemberState, ...]
    num_classes: int
    config: LearnerConfig
    norm_mean: np.ndarray  # (f,) float64
    norm_scale: np.ndarray  # (f,) float64


def _image_features(image: Volume3D, cfg: LearnerConfig) -> np.ndarray:
    """Per-voxel feature rows for one image: (D*H*W, f) float64."""
    data = image.data.astype(np.float64)
    d, h, w = data.shape
    columns = []
    if cfg.use_intensity:
        columns.append(data.ravel())
    if cfg.use_smoothed:
        columns.append(uniform_filter(data, size=3, mode="nearest").ravel())
    if cfg.use_coords:
        for idx, dim in ((0, d), (1, h), (2, w)):
            coord = np.arange(dim, dtype=np.float64)
            coord = coord / (dim - 1) if dim > 1 else np.full(dim, 0.5)
            shape = [1, 1, 1]
            shape[idx] = dim
            columns.append(
                np.broadcast_to(coord.reshape(shape), (d, h, w)).ravel()
            )
    return np.column_stack(columns)


def _norm_constants(cfg: LearnerConfig, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Intensity features are z-scored; coordinates are already in [0, 1].
    f = rows.shape[1]
    mean = np.zeros(f)
    scale = np.ones(f)
    n_intensity = int(cfg.use_intensity) + int(cfg.use_smoothed)
    for col in range(n_intensity):
        mean[col] = rows[:, col].mean()
        std = rows[:, col].std()
        scale[col] = std if std > 0 else 1.0
    return mean, scale


def train(
    cfg: LearnerConfig,
    images: Sequence[Volume3D],
    masks: Sequence[AnnotationMask],
    labels: Sequence[LabelVolume],
    rng: np.random.Generator,
) -> TrainedModel:
    """Fit the ensemble on annotated voxels only.

    ``training_fraction`` subsamples the annotated set once (without
    replacement) before the per-member bootstrap; it is a cheap monotone
    proxy for training-length ablations.
    """
    if not (len(images) == len(masks) == len(labels)):
        raise ValueError("images, masks, and labels must be parallel sequences")
    num_classes = labels[0].num_classes

    rows_list: list[np.ndarray] = []
    label_list: list[np.ndarray] = []
    prov_list: list[np.ndarray] = []
    for i, (image, mask, gt) in enumerate(zip(images, masks, labels)):
        flat = np.flatnonzero(mask.voxel_mask.ravel())
        if flat.size == 0:
            continue
        rows_list.append(_image_features(image, cfg)[flat])
        label_list.append(gt.data.ravel()[flat])
        prov = np.empty((flat.size, 2), dtype=np.int64)
        prov[:, 0] = i
        prov[:, 1] = flat
        prov_list.append(prov)
    if not rows_list:
        raise NoAnnotation("training requires at least one annotated voxel")

    rows = np.concatenate(rows_list)
    sample_labels = np.concatenate(label_list)
    provenance = np.concatenate(prov_list)

    total = rows.shape[0]
    if cfg.training_fraction < 1.0:
        keep = max(1, int(round(cfg.training_fraction * total)))
        chosen = np.sort(rng.choice(total, size=keep, replace=False))
        rows, sample_labels, provenance = rows[chosen], sample_labels[chosen], provenance[chosen]
        total = keep

    mean, scale = _norm_constants(cfg, rows)
    rows = (rows - mean) / scale

    members = []
    for _ in range(cfg.ensemble_size):
        if cfg.bootstrap:
            idx = np.sort(rng.integers(0, total, size=total))
        else:
            idx = np.arange(total)
        members.append(MemberState(rows[idx], sample_labels[idx], provenance[idx]))
    return TrainedModel(tuple(members), num_classes, cfg, mean, scale)


def _neighbor_votes(
    member: MemberState,
    queries: np.ndarray,
    k: int,
    num_classes: int,
    tree: cKDTree | None,
) -> np.ndarray:
    """Soft votes of the k nearest samples, one distribution per query row."""
    n_train = member.features.shape[0]
    k_eff = min(k, n_train)

    if tree is not None:
        dist, idx = tree.query(queries, k=k_eff)
        if k_eff == 1:
            dist = dist[:, None]
            idx = idx[:, None]
    else:
        t = member.features
        d2 = (
            (queries * queries).sum(axis=1)[:, None]
            + (t * t).sum(axis=1)[None, :]
            - 2.0 * queries @ t.T
        )
        np.maximum(d2, 0.0, out=d2)
        if k_eff < n_train:
            idx = np.argpartition(d2, k_eff - 1, axis=1)[:, :k_eff]
        else:
            idx = np.broadcast_to(np.arange(n_train), (queries.shape[0], n_train)).copy()
        dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))

    # Canonical neighbor order: sort by sample index first, then stable-sort
    # by distance, so ties always resolve the same way on both index paths.
    order = np.argsort(idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    order = np.argsort(dist, axis=1, kind="stable")
    idx = np.take_along_axis(idx, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)

    weights = 1.0 / (dist + DISTANCE_EPS)
    votes = np.zeros((queries.shape[0], num_classes), dtype=np.float64)
    rows = np.arange(queries.shape[0])
    for j in range(k_eff):
        np.add.at(votes, (rows, member.labels[idx[:, j]]), weights[:, j])
    votes /= votes.sum(axis=1, keepdims=True)
    return votes


def predict_ensemble(model: TrainedModel, image: Volume3D) -> EnsembleProbabilityStack:
    """Per-member, per-voxel class distributions for one image."""
    cfg = model.config
    queries = (_image_features(image, cfg) - model.norm_mean) / model.norm_scale
    d, h, w = image.shape
    n = queries.shape[0]
    stack = np.empty((len(model.members), model.num_classes, d, h, w), dtype=np.float32)
    for e, member in enumerate(model.members):
        tree = cKDTree(member.features) if cfg.index == "kdtree" else None
        probs = np.empty((n, model.num_classes), dtype=np.float64)
        for start in range(0, n, _QUERY_CHUNK):
            chunk = queries[start : start + _QUERY_CHUNK]
            probs[start : start + chunk.shape[0]] = _neighbor_votes(
                member, chunk, cfg.k, model.num_classes, tree
            )
        stack[e] = probs.T.reshape(model.num_classes, d, h, w).astype(np.float32)
    return EnsembleProbabilityStack(stack)


def labels_from_stack(stack: EnsembleProbabilityStack) -> np.ndarray:
    """Argmax of the member-mean probability; ties go to the lowest class id."""
    mean = stack.data.astype(np.float64).sum(axis=0) / stack.members
    return mean.argmax(axis=0).astype(np.uint8)


def predict_labels(model: TrainedModel, image: Volume3D) -> LabelVolume:
    stack = predict_ensemble(model, image)
    return LabelVolume(labels_from_stack(stack), model.num_classes)
