"""Shared fixtures and independent brute-force oracles used across tests."""

import numpy as np
import pytest

from patchal.volumes import EnsembleProbabilityStack, PatchBox


def random_stack(rng, members, classes, shape) -> EnsembleProbabilityStack:
    """Random valid probability stack (gamma draws normalized per voxel)."""
    raw = rng.gamma(1.0, size=(members, classes) + tuple(shape)).astype(np.float32)
    raw /= raw.sum(axis=1, keepdims=True)
    return EnsembleProbabilityStack(raw)


def box_voxels(box: PatchBox) -> set:
    """Explicit voxel set of a box; the slow reference for overlap logic."""
    (z0, y0, x0), (z1, y1, x1) = box.origin, box.end
    return {
        (z, y, x)
        for z in range(z0, z1)
        for y in range(y0, y1)
        for x in range(x0, x1)
    }


def random_box(rng, shape, max_size=None) -> PatchBox:
    size = tuple(
        int(rng.integers(1, (max_size or d) + 1)) for d in shape
    )
    size = tuple(min(s, d) for s, d in zip(size, shape))
    origin = tuple(int(rng.integers(0, d - s + 1)) for s, d in zip(size, shape))
    return PatchBox(origin, size)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
