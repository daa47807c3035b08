"""Patch-level score fields via 3-D summed-area tables.

A summed-area table turns the mean over any axis-aligned box into an O(1)
eight-corner lookup, so scoring every stride-1 patch placement of an
uncertainty map costs one prefix-sum pass plus one vectorized subtraction.
Sums accumulate in float64 to bound cancellation error; the emitted field
is float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PatchLargerThanImage
from .volumes import Shape3, Volume3D


@dataclass(frozen=True)
class SummedAreaTable3D:
    """Inclusion-exclusion prefix sums with zero-padded leading planes."""

    table: np.ndarray  # float64, shape (D+1, H+1, W+1)

    @property
    def image_shape(self) -> Shape3:
        d, h, w = self.table.shape
        return (d - 1, h - 1, w - 1)

    def box_sum(self, origin, size) -> float:
        """Sum of the map over one box placement."""
        z0, y0, x0 = origin
        z1, y1, x1 = (o + s for o, s in zip(origin, size))
        t = self.table
        return float(
            t[z1, y1, x1]
            - t[z0, y1, x1]
            - t[z1, y0, x1]
            - t[z1, y1, x0]
            + t[z0, y0, x1]
            + t[z0, y1, x0]
            + t[z1, y0, x0]
            - t[z0, y0, x0]
        )


@dataclass(frozen=True)
class ScoreField:
    """Mean uncertainty for every valid patch origin, indexed by origin."""

    image_id: str
    patch_size: Shape3
    values: np.ndarray  # float32, shape (D-dz+1, H-dy+1, W-dx+1)

    @property
    def num_candidates(self) -> int:
        return int(self.values.size)


def build_sat(volume) -> SummedAreaTable3D:
    """Build the prefix-sum table for a map (``Volume3D`` or ndarray)."""
    data = volume.data if isinstance(volume, Volume3D) else np.asarray(volume)
    if data.ndim != 3:
        raise ValueError(f"expected a 3-D map, got ndim={data.ndim}")
    d, h, w = data.shape
    table = np.zeros((d + 1, h + 1, w + 1), dtype=np.float64)
    acc = np.cumsum(data, axis=0, dtype=np.float64)
    acc = np.cumsum(acc, axis=1)
    acc = np.cumsum(acc, axis=2)
    table[1:, 1:, 1:] = acc
    return SummedAreaTable3D(table)


def window_mean(sat: SummedAreaTable3D, patch_size, image_id: str = "") -> ScoreField:
    """Mean over every stride-1 patch placement fully inside the image.

    Placements that would hang over the volume edge are not candidates;
    partial patches would distort the mean.
    """
    dz, dy, dx = (int(v) for v in patch_size)
    d, h, w = sat.image_shape
    if dz > d or dy > h or dx > w:
        raise PatchLargerThanImage(
            f"window {(dz, dy, dx)} exceeds image shape {(d, h, w)}"
        )
    if min(dz, dy, dx) <= 0:
        raise ValueError(f"patch size components must be positive, got {(dz, dy, dx)}")

    t = sat.table
    sums = (
        t[dz:, dy:, dx:]
        - t[:-dz, dy:, dx:]
        - t[dz:, :-dy, dx:]
        - t[dz:, dy:, :-dx]
        + t[:-dz, :-dy, dx:]
        + t[:-dz, dy:, :-dx]
        + t[dz:, :-dy, :-dx]
        - t[:-dz, :-dy, :-dx]
    )
    values = (sums / float(dz * dy * dx)).astype(np.float32)
    return ScoreField(image_id, (dz, dy, dx), values)
