"""Core 3D volume types, patch/box arithmetic, and the on-disk container.

Container layout, little-endian throughout:

    bytes 0..7      ASCII magic ``NAVOL001``
    bytes 8..11     uint32 header length N
    bytes 12..12+N  UTF-8 JSON header, e.g.
                    ``{"dtype":"f32","kind":"image","shape":[D,H,W]}``
    remainder       raw payload, row-major (D-major, W-fastest)

Label volumes add ``"classes"`` to the header; probability stacks use kind
``"prob"`` with ``"classes"`` and ``"members"`` and store the payload
member-major, then class, then voxel.  Headers are serialized canonically
(sorted keys, no whitespace) so writing the same value twice yields
byte-identical files.

Axis order is (z, y, x) everywhere.  All types are immutable after
construction; operations that "mutate" (e.g. growing an annotation mask)
return a new value.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    HeaderMismatch,
    IoFailure,
    NonFiniteData,
    OutOfBounds,
)

MAGIC = b"NAVOL001"

#: Sentinel class id marking voxels without annotation in partial label views.
#: Ground-truth label volumes never contain it, which caps the class count at 255.
UNLABELED = 255

_DTYPES = {
    "f32": np.dtype("<f4"),
    "u8": np.dtype("u1"),
    "u16": np.dtype("<u2"),
}
_DTYPE_CODES = {
    np.dtype("float32"): "f32",
    np.dtype("uint8"): "u8",
    np.dtype("uint16"): "u16",
}

Shape3 = tuple[int, int, int]


def _as_shape(shape) -> Shape3:
    out = tuple(int(v) for v in shape)
    if len(out) != 3:
        raise ValueError(f"expected a 3-tuple shape, got {shape!r}")
    return out


def _own_readonly(arr: np.ndarray, source) -> np.ndarray:
    """Return a private, read-only copy-or-view of ``arr``."""
    if arr is source:
        arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Volume3D:
    """Dense scalar field with shape (depth, height, width).

    The backing array is private and read-only, so instances can be shared
    across parallel workers without copies.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got ndim={arr.ndim}")
        if arr.dtype not in _DTYPE_CODES:
            raise ValueError(
                f"unsupported dtype {arr.dtype}; use float32, uint8 or uint16"
            )
        if arr.dtype == np.float32 and not np.isfinite(arr).all():
            raise NonFiniteData("volume payload contains NaN or Inf")
        object.__setattr__(self, "data", _own_readonly(arr, self.data))

    @property
    def shape(self) -> Shape3:
        return self.data.shape

    @property
    def dtype_code(self) -> str:
        return _DTYPE_CODES[self.data.dtype]


@dataclass(frozen=True)
class LabelVolume:
    """Per-voxel class ids in uint8; ``UNLABELED`` is the only legal sentinel."""

    data: np.ndarray
    num_classes: int

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"expected a 3-D array, got ndim={arr.ndim}")
        if arr.dtype != np.uint8:
            raise ValueError(f"label volumes must be uint8, got {arr.dtype}")
        c = int(self.num_classes)
        if not 2 <= c <= UNLABELED:
            raise ValueError(f"num_classes must be in [2, {UNLABELED}], got {c}")
        bad = (arr >= c) & (arr != UNLABELED)
        if bad.any():
            raise ValueError("label volume contains ids outside [0, num_classes)")
        object.__setattr__(self, "data", _own_readonly(arr, self.data))
        object.__setattr__(self, "num_classes", c)

    @property
    def shape(self) -> Shape3:
        return self.data.shape

    @property
    def foreground_mask(self) -> np.ndarray:
        return (self.data > 0) & (self.data != UNLABELED)


@dataclass(frozen=True)
class PatchBox:
    """Axis-aligned box: ``origin`` (z, y, x) plus positive ``size`` (dz, dy, dx)."""

    origin: Shape3
    size: Shape3

    def __post_init__(self):
        origin = _as_shape(self.origin)
        size = _as_shape(self.size)
        if any(v < 0 for v in origin):
            raise ValueError(f"origin components must be non-negative, got {origin}")
        if any(v <= 0 for v in size):
            raise ValueError(f"size components must be positive, got {size}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "size", size)

    @property
    def end(self) -> Shape3:
        return tuple(o + s for o, s in zip(self.origin, self.size))

    @property
    def volume(self) -> int:
        dz, dy, dx = self.size
        return dz * dy * dx

    @property
    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + s) for o, s in zip(self.origin, self.size))

    def inside(self, shape) -> bool:
        return all(e <= d for e, d in zip(self.end, _as_shape(shape)))


def clamp_patch(requested_size, image_shape) -> Shape3:
    """Shrink a requested patch size per axis so it fits the image."""
    size = _as_shape(requested_size)
    shape = _as_shape(image_shape)
    if any(v <= 0 for v in size):
        raise ValueError(f"patch size components must be positive, got {size}")
    return tuple(min(s, d) for s, d in zip(size, shape))


def intersection_voxels(a: PatchBox, b: PatchBox) -> int:
    """Number of voxels shared by two boxes."""
    count = 1
    for ao, ae, bo, be in zip(a.origin, a.end, b.origin, b.end):
        overlap = min(ae, be) - max(ao, bo)
        if overlap <= 0:
            return 0
        count *= overlap
    return count


def overlap_fraction(a: PatchBox, b: PatchBox) -> float:
    """Shared voxels as a fraction of box ``a``'s volume; 0.0 when disjoint."""
    return intersection_voxels(a, b) / a.volume


@dataclass(frozen=True)
class AnnotationMask:
    """Which voxels of one image are annotated: the union of its patch boxes."""

    image_id: str
    shape: Shape3
    boxes: tuple[PatchBox, ...] = ()

    def __post_init__(self):
        shape = _as_shape(self.shape)
        boxes = tuple(self.boxes)
        for box in boxes:
            if not box.inside(shape):
                raise OutOfBounds(
                    f"box {box.origin}+{box.size} exceeds image shape {shape}"
                )
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "boxes", boxes)

    @cached_property
    def voxel_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for box in self.boxes:
            mask[box.slices] = True
        mask.setflags(write=False)
        return mask

    @property
    def voxel_count(self) -> int:
        return int(self.voxel_mask.sum())

    def is_saturated(self) -> bool:
        d, h, w = self.shape
        return self.voxel_count == d * h * w

    def union(self, box: PatchBox) -> "AnnotationMask":
        if not box.inside(self.shape):
            raise OutOfBounds(
                f"box {box.origin}+{box.size} exceeds image shape {self.shape}"
            )
        if box in self.boxes:
            return self
        return AnnotationMask(self.image_id, self.shape, self.boxes + (box,))


def union_annotation(mask: AnnotationMask, box: PatchBox) -> AnnotationMask:
    """Add ``box`` to the mask; idempotent for duplicate boxes."""
    return mask.union(box)


@dataclass(frozen=True)
class EnsembleProbabilityStack:
    """Softmax probabilities laid out [member][class][z][y][x] in float32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr.ndim != 5:
            raise ValueError(f"expected a 5-D array, got ndim={arr.ndim}")
        if arr.dtype != np.float32:
            raise ValueError(f"probability stacks must be float32, got {arr.dtype}")
        if arr.size and not np.isfinite(arr).all():
            raise NonFiniteData("probability stack contains NaN or Inf")
        object.__setattr__(self, "data", _own_readonly(arr, self.data))

    @property
    def members(self) -> int:
        return self.data.shape[0]

    @property
    def classes(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Shape3:
        return self.data.shape[2:]

    def validate(self, atol: float = 1e-4) -> None:
        """Check the probability invariants; raises ValueError on violation."""
        if self.members < 1:
            raise ValueError("stack must have at least one member")
        if self.classes < 2:
            raise ValueError("stack must have at least two classes")
        if (self.data < 0).any() or (self.data > 1).any():
            raise ValueError("probabilities must lie in [0, 1]")
        sums = self.data.sum(axis=1, dtype=np.float64)
        if not np.allclose(sums, 1.0, atol=atol, rtol=0.0):
            raise ValueError(f"class probabilities must sum to 1 within {atol}")


# --- container I/O -----------------------------------------------------------


def _canonical_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _header_and_payload(v) -> tuple[dict, bytes]:
    if isinstance(v, Volume3D):
        header = {"dtype": v.dtype_code, "kind": "image", "shape": list(v.shape)}
        payload = np.ascontiguousarray(v.data, dtype=_DTYPES[v.dtype_code])
    elif isinstance(v, LabelVolume):
        header = {
            "dtype": "u8",
            "kind": "label",
            "shape": list(v.shape),
            "classes": v.num_classes,
        }
        payload = np.ascontiguousarray(v.data, dtype=_DTYPES["u8"])
    elif isinstance(v, EnsembleProbabilityStack):
        header = {
            "dtype": "f32",
            "kind": "prob",
            "shape": list(v.shape),
            "classes": v.classes,
            "members": v.members,
        }
        payload = np.ascontiguousarray(v.data, dtype=_DTYPES["f32"])
    else:
        raise TypeError(f"cannot serialize {type(v).__name__} as a volume")
    return header, payload.tobytes()


def write_volume(v, path) -> None:
    """Serialize a volume, label volume, or probability stack to ``path``.

    Identical inputs produce byte-identical files.
    """
    header, payload = _header_and_payload(v)
    header_bytes = _canonical_header(header)
    blob = MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write volume to {path}: {exc}") from exc


def _require(header: dict, key: str):
    if key not in header:
        raise HeaderMismatch(f"header is missing required key {key!r}")
    return header[key]


def read_volume(path):
    """Read a container file; returns the type matching the header's kind."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read volume from {path}: {exc}") from exc

    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path} does not start with {MAGIC!r}")
    if len(blob) < len(MAGIC) + 4:
        raise HeaderMismatch(f"{path} is truncated before the header length")
    (header_len,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_start = len(MAGIC) + 4
    header_end = header_start + header_len
    if len(blob) < header_end:
        raise HeaderMismatch(f"{path} is truncated inside the header")
    try:
        header = json.loads(blob[header_start:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatch(f"{path} header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderMismatch(f"{path} header must be a JSON object")

    dtype_code = _require(header, "dtype")
    kind = _require(header, "kind")
    try:
        shape = _as_shape(_require(header, "shape"))
    except (TypeError, ValueError) as exc:
        raise HeaderMismatch(f"invalid shape in header: {exc}") from exc
    if any(d <= 0 for d in shape):
        raise HeaderMismatch(f"shape components must be positive, got {shape}")
    if dtype_code not in _DTYPES:
        raise HeaderMismatch(f"unknown dtype code {dtype_code!r}")
    dtype = _DTYPES[dtype_code]

    count = shape[0] * shape[1] * shape[2]
    if kind == "prob":
        members = int(_require(header, "members"))
        classes = int(_require(header, "classes"))
        if members < 0 or classes < 1:
            raise HeaderMismatch("members/classes must be non-negative/positive")
        count *= members * classes
    declared = count * dtype.itemsize
    actual = len(blob) - header_end
    if declared != actual:
        raise HeaderMismatch(
            f"payload size mismatch: header declares {declared} bytes, found {actual}"
        )

    flat = np.frombuffer(blob, dtype=dtype, count=count, offset=header_end)
    if kind == "image":
        return Volume3D(flat.reshape(shape).astype(dtype.newbyteorder("=")))
    if kind == "label":
        if dtype_code != "u8":
            raise HeaderMismatch("label volumes must use dtype u8")
        classes = int(_require(header, "classes"))
        return LabelVolume(flat.reshape(shape), classes)
    if kind == "prob":
        arr = flat.reshape((members, classes) + shape).astype(np.float32)
        return EnsembleProbabilityStack(arr)
    raise HeaderMismatch(f"unknown volume kind {kind!r}")
