"""Voxelwise uncertainty maps from ensemble probability stacks.

Three map kinds are provided: predictive entropy (entropy of the member-mean
distribution), expected entropy (mean of per-member entropies), and their
difference (mutual information between prediction and membership), clamped
at zero.  Natural logarithm throughout; only rankings matter downstream, so
the base is irrelevant for selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStack
from .volumes import EnsembleProbabilityStack, Volume3D

#: Probabilities are floored here before the logarithm; this both encodes
#: the 0*ln(0) := 0 convention and avoids -Inf, with <= 1e-6 effect.
PROB_FLOOR = 1e-12

KIND_PREDICTIVE_ENTROPY = "PE"
KIND_EXPECTED_ENTROPY = "EE"
KIND_BALD = "BALD"


@dataclass(frozen=True)
class UncertaintyMap:
    image_id: str
    values: Volume3D
    kind: str


def _require_members(stack: EnsembleProbabilityStack) -> None:
    if stack.members < 1:
        raise DegenerateStack("stack has no ensemble members")


def _entropy(p: np.ndarray, axis: int) -> np.ndarray:
    return -(p * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=axis)


def _sorted_member_sum(values: np.ndarray) -> np.ndarray:
    # Summing the member axis in sorted order makes the result invariant,
    # bit for bit, under permutations of the ensemble members.
    return np.sort(values, axis=0).sum(axis=0)


def _predictive_entropy64(stack: EnsembleProbabilityStack) -> np.ndarray:
    mean = _sorted_member_sum(stack.data.astype(np.float64)) / stack.members
    return _entropy(mean, axis=0)


def _expected_entropy64(stack: EnsembleProbabilityStack) -> np.ndarray:
    per_member = np.stack(
        [_entropy(stack.data[e].astype(np.float64), axis=0) for e in range(stack.members)]
    )
    return _sorted_member_sum(per_member) / stack.members


def predictive_entropy(stack: EnsembleProbabilityStack, image_id: str = "") -> UncertaintyMap:
    """Entropy of the member-mean class distribution, per voxel."""
    _require_members(stack)
    values = _predictive_entropy64(stack).astype(np.float32)
    return UncertaintyMap(image_id, Volume3D(values), KIND_PREDICTIVE_ENTROPY)


def expected_entropy(stack: EnsembleProbabilityStack, image_id: str = "") -> UncertaintyMap:
    """Mean of per-member entropies, per voxel."""
    _require_members(stack)
    values = _expected_entropy64(stack).astype(np.float32)
    return UncertaintyMap(image_id, Volume3D(values), KIND_EXPECTED_ENTROPY)


def bald(stack: EnsembleProbabilityStack, image_id: str = "") -> UncertaintyMap:
    """Predictive minus expected entropy, clamped at zero.

    The difference is non-negative analytically; tiny negative values are
    float artifacts and are clamped away.  For a single member the two
    entropies are computed on the identical array, so the map is exactly
    zero.
    """
    _require_members(stack)
    diff = _predictive_entropy64(stack) - _expected_entropy64(stack)
    values = np.maximum(diff, 0.0).astype(np.float32)
    return UncertaintyMap(image_id, Volume3D(values), KIND_BALD)
