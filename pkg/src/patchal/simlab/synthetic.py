"""Synthetic 3D segmentation datasets with exact labels.

Each image is Gaussian background noise plus a handful of ellipsoids or
boxes per foreground class, rendered at class-specific intensity offsets.
Shape volumes are sized towards a requested foreground fraction; a single
corrective re-render keeps the realized fraction near the target.  The
actual fraction is always reported alongside the data.

Dataset directory layout:

    <dir>/images/<id>.navol
    <dir>/labels/<id>.navol
    <dir>/dataset.json       {"ids": [...], "classes": C,
                              "split": {"trainpool": [...], "test": [...]},
                              "generator": {...}}
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import IoFailure, SpecInfeasible
from ..seeding import rng_stream
from ..volumes import LabelVolume, Shape3, Volume3D, read_volume, write_volume

#: Realized foreground fraction may deviate from the target by this relative
#: amount before generation is declared infeasible.
FG_TOLERANCE = 0.5


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic cohort.

    Each foreground class is anchored at a dataset-level location and its
    shapes scatter around that anchor per image (``placement_jitter`` as a
    fraction of the image extent), mimicking how anatomy sits in roughly
    consistent positions across patients.
    """

    num_images: int
    shape: Shape3
    num_classes: int
    shapes_per_class: tuple[int, int] = (1, 3)
    noise_std: float = 0.25
    fg_fraction_target: float = 0.05
    class_contrast: float = 1.0
    placement_jitter: float = 0.12
    image_blur: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(v) for v in self.shape))
        object.__setattr__(
            self, "shapes_per_class", tuple(int(v) for v in self.shapes_per_class)
        )
        if self.num_images < 1:
            raise ValueError("num_images must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2 (background plus foreground)")
        lo, hi = self.shapes_per_class
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid shapes_per_class range {self.shapes_per_class}")
        if not 0.0 < self.fg_fraction_target < 1.0:
            raise ValueError("fg_fraction_target must lie in (0, 1)")
        if self.noise_std < 0.0:
            raise ValueError("noise_std must be non-negative")
        if self.placement_jitter < 0.0:
            raise ValueError("placement_jitter must be non-negative")
        if self.image_blur < 0.0:
            raise ValueError("image_blur must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        d["shapes_per_class"] = list(self.shapes_per_class)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(
            num_images=int(d["num_images"]),
            shape=tuple(d["shape"]),
            num_classes=int(d["num_classes"]),
            shapes_per_class=tuple(d.get("shapes_per_class", (1, 3))),
            noise_std=float(d.get("noise_std", 0.25)),
            fg_fraction_target=float(d.get("fg_fraction_target", 0.05)),
            class_contrast=float(d.get("class_contrast", 1.0)),
            placement_jitter=float(d.get("placement_jitter", 0.12)),
            image_blur=float(d.get("image_blur", 0.0)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class SyntheticDataset:
    ids: list[str]
    images: dict[str, Volume3D]
    labels: dict[str, LabelVolume]
    num_classes: int
    fg_fraction_actual: float
    spec: SyntheticSpec


@dataclass
class LoadedDataset:
    """A dataset directory pulled into memory."""

    ids: list[str]
    num_classes: int
    images: dict[str, Volume3D]
    labels: dict[str, LabelVolume]
    split: dict[str, list[str]]
    meta: dict = field(default_factory=dict)


def fill_ellipsoid(labels: np.ndarray, center, radii, class_id: int) -> None:
    """Voxelize an axis-aligned ellipsoid into a label array, in place."""
    d, h, w = labels.shape
    cz, cy, cx = center
    rz, ry, rx = radii
    zz = ((np.arange(d) - cz) / rz) ** 2
    yy = ((np.arange(h) - cy) / ry) ** 2
    xx = ((np.arange(w) - cx) / rx) ** 2
    inside = zz[:, None, None] + yy[None, :, None] + xx[None, None, :] <= 1.0
    labels[inside] = class_id


def fill_box(labels: np.ndarray, center, half_sizes, class_id: int) -> None:
    """Voxelize an axis-aligned box (center plus half extents), in place."""
    slices = []
    for c, half, dim in zip(center, half_sizes, labels.shape):
        lo = max(0, int(round(c - half)))
        hi = min(dim, int(round(c + half)) + 1)
        slices.append(slice(lo, hi))
    labels[tuple(slices)] = class_id


def _render_labels(spec: SyntheticSpec, scale: float) -> list[np.ndarray]:
    rng = rng_stream(spec.seed, "synthetic-labels")
    d, h, w = spec.shape
    total_voxels = d * h * w
    fg_classes = spec.num_classes - 1
    per_class_target = spec.fg_fraction_target * total_voxels / fg_classes
    lo, hi = spec.shapes_per_class

    # Dataset-level anchors: every image scatters a class's shapes around
    # the same location, the way anatomy recurs across patients.
    anchors = rng.uniform(0.25, 0.75, size=(fg_classes, 3))

    volumes: list[np.ndarray] = []
    for _ in range(spec.num_images):
        labels = np.zeros(spec.shape, dtype=np.uint8)
        for cls in range(1, spec.num_classes):
            count = int(rng.integers(lo, hi + 1))
            shape_volume = (scale ** 3) * per_class_target / count
            anchor = anchors[cls - 1]
            for _ in range(count):
                factors = rng.uniform(0.7, 1.4, size=3)
                factors /= float(np.cbrt(factors.prod()))
                as_box = bool(rng.random() < 0.5)
                if as_box:
                    halves = np.maximum(np.cbrt(shape_volume) * factors / 2.0, 0.5)
                    extents = np.ceil(halves).astype(int)
                else:
                    r0 = float(np.cbrt(3.0 * shape_volume / (4.0 * math.pi)))
                    radii = np.maximum(r0 * factors, 1.0)
                    extents = np.ceil(radii).astype(int)
                if any(2 * e + 1 > dim for e, dim in zip(extents, spec.shape)):
                    raise SpecInfeasible(
                        f"a foreground shape of extents {tuple(extents)} cannot fit "
                        f"inside image shape {spec.shape}"
                    )
                offsets = rng.normal(0.0, spec.placement_jitter, size=3)
                center = tuple(
                    int(np.clip(round((a + o) * dim), e, dim - 1 - e))
                    for a, o, e, dim in zip(anchor, offsets, extents, spec.shape)
                )
                if as_box:
                    fill_box(labels, center, halves, cls)
                else:
                    fill_ellipsoid(labels, center, radii, cls)
        volumes.append(labels)
    return volumes


def _fg_fraction(label_arrays: list[np.ndarray]) -> float:
    fg = sum(int((arr > 0).sum()) for arr in label_arrays)
    total = sum(arr.size for arr in label_arrays)
    return fg / total


def generate_dataset(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministically render images and exact labels for ``spec``."""
    label_arrays = _render_labels(spec, scale=1.0)
    actual = _fg_fraction(label_arrays)
    if actual <= 0.0:
        raise SpecInfeasible("no foreground voxels could be placed")
    target = spec.fg_fraction_target
    if abs(actual - target) > FG_TOLERANCE * target:
        # One corrective pass: rescale shape volumes toward the target.
        label_arrays = _render_labels(spec, scale=float(np.cbrt(target / actual)))
        actual = _fg_fraction(label_arrays)

    class_means = np.arange(spec.num_classes, dtype=np.float64) * spec.class_contrast
    noise_rng = rng_stream(spec.seed, "synthetic-noise")
    ids = [f"img_{i:03d}" for i in range(spec.num_images)]
    images: dict[str, Volume3D] = {}
    labels: dict[str, LabelVolume] = {}
    for image_id, arr in zip(ids, label_arrays):
        intensity = class_means[arr]
        if spec.image_blur > 0.0:
            # Point-spread blur: edge voxels take mixed intensities, so
            # boundaries cannot be resolved from intensity alone.
            intensity = gaussian_filter(intensity, sigma=spec.image_blur)
        if spec.noise_std > 0.0:
            intensity = intensity + noise_rng.normal(0.0, spec.noise_std, size=spec.shape)
        images[image_id] = Volume3D(intensity.astype(np.float32))
        labels[image_id] = LabelVolume(arr, spec.num_classes)
    return SyntheticDataset(ids, images, labels, spec.num_classes, actual, spec)


def write_dataset(ds: SyntheticDataset, out_dir, split: dict) -> None:
    """Persist a generated dataset plus its train-pool/test split."""
    root = Path(out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "labels").mkdir(parents=True, exist_ok=True)
        for image_id in ds.ids:
            write_volume(ds.images[image_id], root / "images" / f"{image_id}.navol")
            write_volume(ds.labels[image_id], root / "labels" / f"{image_id}.navol")
        manifest = {
            "ids": list(ds.ids),
            "classes": ds.num_classes,
            "split": {k: sorted(v) for k, v in split.items()},
            "generator": {
                "spec": ds.spec.to_dict(),
                "fg_fraction_actual": ds.fg_fraction_actual,
            },
        }
        (root / "dataset.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {out_dir}: {exc}") from exc


def load_dataset(path) -> LoadedDataset:
    """Read a dataset directory written by :func:`write_dataset`."""
    root = Path(path)
    manifest_path = root / "dataset.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {manifest_path}: {exc}") from exc
    ids = list(manifest["ids"])
    classes = int(manifest["classes"])
    images: dict[str, Volume3D] = {}
    labels: dict[str, LabelVolume] = {}
    for image_id in ids:
        images[image_id] = read_volume(root / "images" / f"{image_id}.navol")
        labels[image_id] = read_volume(root / "labels" / f"{image_id}.navol")
    split = {k: list(v) for k, v in manifest.get("split", {}).items()}
    meta = manifest.get("generator", {})
    return LoadedDataset(ids, classes, images, labels, split, meta)
