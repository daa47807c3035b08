import json
import struct

import numpy as np
import pytest

from conftest import box_voxels, random_box

from patchal.errors import BadMagic, HeaderMismatch, NonFiniteData, OutOfBounds
from patchal.volumes import (
    MAGIC,
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


class TestContainerRoundTrip:
    def test_zero_volume_roundtrip(self, tmp_path):
        v = Volume3D(np.zeros((2, 2, 2), dtype=np.float32))
        path = tmp_path / "zeros.navol"
        write_volume(v, path)
        back = read_volume(path)
        assert isinstance(back, Volume3D)
        assert np.array_equal(back.data, v.data)

    @pytest.mark.parametrize("dtype", [np.float32, np.uint8, np.uint16])
    def test_image_roundtrip_bit_exact(self, tmp_path, rng, dtype):
        if dtype == np.float32:
            data = rng.normal(size=(3, 4, 5)).astype(dtype)
        else:
            data = rng.integers(0, 200, size=(3, 4, 5)).astype(dtype)
        path = tmp_path / "img.navol"
        write_volume(Volume3D(data), path)
        first = path.read_bytes()
        back = read_volume(path)
        assert back.data.tobytes() == data.tobytes()
        write_volume(back, path)
        assert path.read_bytes() == first

    def test_label_roundtrip(self, tmp_path, rng):
        data = rng.integers(0, 4, size=(4, 4, 4)).astype(np.uint8)
        path = tmp_path / "lbl.navol"
        write_volume(LabelVolume(data, 4), path)
        back = read_volume(path)
        assert isinstance(back, LabelVolume)
        assert back.num_classes == 4
        assert np.array_equal(back.data, data)

    def test_prob_stack_roundtrip(self, tmp_path, rng):
        from conftest import random_stack

        stack = random_stack(rng, 3, 2, (2, 3, 4))
        path = tmp_path / "prob.navol"
        write_volume(stack, path)
        back = read_volume(path)
        assert isinstance(back, EnsembleProbabilityStack)
        assert np.array_equal(back.data, stack.data)

    def test_write_is_deterministic(self, tmp_path, rng):
        data = rng.normal(size=(2, 2, 2)).astype(np.float32)
        p1, p2 = tmp_path / "a.navol", tmp_path / "b.navol"
        write_volume(Volume3D(data), p1)
        write_volume(Volume3D(data), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_golden_bytes_single_voxel(self, tmp_path):
        # Assemble the expected container independently of the writer.
        path = tmp_path / "one.navol"
        write_volume(Volume3D(np.array([[[7]]], dtype=np.uint8)), path)
        header = json.dumps(
            {"dtype": "u8", "kind": "image", "shape": [1, 1, 1]},
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        expected = b"NAVOL001" + struct.pack("<I", len(header)) + header + bytes([7])
        assert path.read_bytes() == expected


class TestContainerErrors:
    def test_nan_rejected(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(NonFiniteData):
            Volume3D(data)

    def test_inf_rejected(self):
        data = np.zeros((1, 1, 1), dtype=np.float32)
        data[0, 0, 0] = np.inf
        with pytest.raises(NonFiniteData):
            Volume3D(data)

    def test_bad_magic(self, tmp_path, rng):
        path = tmp_path / "garbage.navol"
        path.write_bytes(rng.integers(0, 255, size=64).astype(np.uint8).tobytes())
        with pytest.raises(BadMagic):
            read_volume(path)

    def test_header_payload_mismatch(self, tmp_path):
        # Header declares 4x4x4 float32 (64 values) but the payload has 255.
        header = json.dumps(
            {"dtype": "f32", "kind": "image", "shape": [4, 4, 4]},
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        payload = np.zeros(255, dtype="<f4").tobytes()
        path = tmp_path / "short.navol"
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)
        with pytest.raises(HeaderMismatch):
            read_volume(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "trunc.navol"
        path.write_bytes(MAGIC + struct.pack("<I", 1000) + b"{}")
        with pytest.raises(HeaderMismatch):
            read_volume(path)

    def test_nonfinite_payload_rejected_on_read(self, tmp_path):
        header = json.dumps(
            {"dtype": "f32", "kind": "image", "shape": [1, 1, 1]},
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        payload = np.array([np.nan], dtype="<f4").tobytes()
        path = tmp_path / "nan.navol"
        path.write_bytes(MAGIC + struct.pack("<I", len(header)) + header + payload)
        with pytest.raises(NonFiniteData):
            read_volume(path)


class TestClampPatch:
    def test_fits(self):
        assert clamp_patch((4, 40, 40), (10, 50, 50)) == (4, 40, 40)

    def test_per_axis_min(self):
        assert clamp_patch((20, 20, 20), (12, 64, 64)) == (12, 20, 20)

    def test_all_axes_clamped(self):
        assert clamp_patch((64, 64, 64), (32, 32, 32)) == (32, 32, 32)


class TestOverlapFraction:
    def test_identical_boxes(self):
        a = PatchBox((1, 2, 3), (2, 2, 2))
        assert overlap_fraction(a, a) == 1.0

    def test_face_adjacent_disjoint(self):
        a = PatchBox((0, 0, 0), (2, 2, 2))
        b = PatchBox((2, 0, 0), (2, 2, 2))
        assert overlap_fraction(a, b) == 0.0

    def test_half_overlap_shifted_z(self):
        a = PatchBox((0, 0, 0), (2, 2, 2))
        b = PatchBox((1, 0, 0), (2, 2, 2))
        assert overlap_fraction(a, b) == 0.5

    def test_against_voxel_set_oracle(self, rng):
        shape = (16, 16, 16)
        for _ in range(100):
            a = random_box(rng, shape)
            b = random_box(rng, shape)
            shared = len(box_voxels(a) & box_voxels(b))
            assert overlap_fraction(a, b) == pytest.approx(shared / a.volume)
            # both directions describe the same intersection count
            assert overlap_fraction(a, b) * a.volume == pytest.approx(
                overlap_fraction(b, a) * b.volume
            )


class TestAnnotationMask:
    def test_union_idempotent(self):
        mask = AnnotationMask("img", (4, 4, 4))
        box = PatchBox((0, 0, 0), (2, 2, 2))
        once = union_annotation(mask, box)
        twice = union_annotation(once, box)
        assert once.voxel_count == 8
        assert twice.voxel_count == 8

    def test_union_counts(self):
        mask = AnnotationMask("img", (4, 4, 4))
        a = union_annotation(mask, PatchBox((0, 0, 0), (2, 2, 2)))
        disjoint = union_annotation(a, PatchBox((2, 2, 2), (2, 2, 2)))
        assert disjoint.voxel_count == 16
        half = union_annotation(a, PatchBox((1, 0, 0), (2, 2, 2)))
        assert half.voxel_count == 12

    def test_union_grows_monotonically(self, rng):
        mask = AnnotationMask("img", (8, 8, 8))
        for _ in range(10):
            grown = union_annotation(mask, random_box(rng, (8, 8, 8)))
            assert grown.voxel_count >= mask.voxel_count
            mask = grown

    def test_out_of_bounds(self):
        mask = AnnotationMask("img", (4, 4, 4))
        with pytest.raises(OutOfBounds):
            union_annotation(mask, PatchBox((3, 3, 3), (2, 2, 2)))

    def test_voxel_count_matches_brute_union(self, rng):
        shape = (10, 10, 10)
        for _ in range(200):
            boxes = [random_box(rng, shape) for _ in range(int(rng.integers(1, 6)))]
            mask = AnnotationMask("img", shape)
            for box in boxes:
                mask = union_annotation(mask, box)
            expected = set().union(*(box_voxels(b) for b in boxes))
            assert mask.voxel_count == len(expected)

    def test_immutability(self):
        mask = AnnotationMask("img", (4, 4, 4))
        grown = mask.union(PatchBox((0, 0, 0), (1, 1, 1)))
        assert mask.voxel_count == 0
        assert grown.voxel_count == 1
        with pytest.raises(ValueError):
            mask.voxel_mask[0, 0, 0] = True


class TestLabelVolume:
    def test_rejects_out_of_range_ids(self):
        data = np.full((2, 2, 2), 9, dtype=np.uint8)
        with pytest.raises(ValueError):
            LabelVolume(data, 4)

    def test_allows_sentinel(self):
        data = np.full((2, 2, 2), 255, dtype=np.uint8)
        lv = LabelVolume(data, 4)
        assert not lv.foreground_mask.any()
