import json
from pathlib import Path

import numpy as np
import pytest

from conftest import box_voxels

from patchal.config import ExperimentConfig, LabelRegime
from patchal.errors import RaggedResults, TooFewImages
from patchal.evaluation import (
    CSV_HEADER,
    build_report,
    csv_rows,
    discover_runs,
    render_markdown,
    write_report,
)
from patchal.experiment import run_experiment, split_dataset
from patchal.simlab import LearnerConfig, SyntheticSpec
from patchal.volumes import PatchBox

SPEC = SyntheticSpec(
    num_images=8,
    shape=(14, 14, 14),
    num_classes=3,
    noise_std=0.3,
    fg_fraction_target=0.06,
    seed=21,
)

FAST_LEARNER = LearnerConfig(ensemble_size=2, k=3, training_fraction=0.5)


def make_config(method="Random", out="runs", **overrides):
    defaults = dict(
        dataset=SPEC,
        method=method,
        label_regime=LabelRegime(total_budget_patches=10, query_size=2, num_loops=2),
        patch_size=(4, 5, 5),
        learner=FAST_LEARNER,
        seeds=(0, 1),
        output_dir=str(out),
    )
    defaults.update(overrides)
    return ExperimentConfig(**defaults)


class TestSplitDataset:
    def test_eight_ids_split_6_2(self):
        split = split_dataset([f"i{k}" for k in range(8)], seed=0)
        assert len(split["trainpool"]) == 6
        assert len(split["test"]) == 2
        assert set(split["trainpool"]) | set(split["test"]) == {
            f"i{k}" for k in range(8)
        }

    def test_same_seed_same_split(self):
        ids = [f"i{k}" for k in range(9)]
        assert split_dataset(ids, 3) == split_dataset(ids, 3)

    def test_different_seeds_differ_somewhere(self):
        ids = [f"i{k}" for k in range(8)]
        base = split_dataset(ids, 0)
        assert any(split_dataset(ids, s) != base for s in range(1, 21))

    def test_too_few_images(self):
        with pytest.raises(TooFewImages):
            split_dataset(["a", "b", "c"], 0)


class TestRunExperiment:
    def test_random_run_structure(self, tmp_path):
        cfg = make_config("Random", tmp_path)
        results = run_experiment(cfg, 0)
        run_dir = tmp_path / "Random" / "seed_0"
        manifests = sorted(p.name for p in run_dir.glob("loop_*.json"))
        assert manifests == ["loop_000.json", "loop_001.json", "loop_002.json"]
        assert (run_dir / "results.json").exists()
        assert [r["loop"] for r in results["loops"]] == [0, 1, 2]
        assert [r["budget_patches"] for r in results["loops"]] == [6, 8, 10]

    def test_manifest_boxes_disjoint_across_loops(self, tmp_path):
        cfg = make_config("Random66FG", tmp_path)
        run_experiment(cfg, 1)
        run_dir = tmp_path / "Random66FG" / "seed_1"
        taken = {}
        for manifest in sorted(run_dir.glob("loop_*.json")):
            payload = json.loads(manifest.read_text())
            for patch in payload["patches"]:
                box = PatchBox(tuple(patch["origin"]), tuple(patch["size"]))
                voxels = box_voxels(box)
                existing = taken.setdefault(patch["image"], set())
                assert not existing & voxels, manifest.name
                existing |= voxels

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = make_config("PE", tmp_path)
        d1, d2 = tmp_path / "first", tmp_path / "second"
        run_experiment(cfg, 0, run_dir=d1)
        run_experiment(cfg, 0, run_dir=d2)
        files = sorted(p.name for p in d1.glob("*.json"))
        assert files
        for name in files:
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_cumulative_voxels_match_manifest_union(self, tmp_path):
        cfg = make_config("Random", tmp_path)
        results = run_experiment(cfg, 0)
        run_dir = tmp_path / "Random" / "seed_0"
        taken = {}
        for k, record in enumerate(results["loops"]):
            payload = json.loads((run_dir / record["manifest"]).read_text())
            for patch in payload["patches"]:
                box = PatchBox(tuple(patch["origin"]), tuple(patch["size"]))
                taken.setdefault(patch["image"], set()).update(box_voxels(box))
            total = sum(len(v) for v in taken.values())
            expected_patches = sum(
                len(json.loads((run_dir / r["manifest"]).read_text())["patches"])
                for r in results["loops"][: k + 1]
            )
            assert record["budget_patches"] == expected_patches
            # Boxes never overlap at o=0, so the union equals the sum.
            assert total == sum(
                PatchBox(tuple(p["origin"]), tuple(p["size"])).volume
                for r in results["loops"][: k + 1]
                for p in json.loads((run_dir / r["manifest"]).read_text())["patches"]
            )

    def test_annotated_voxels_strictly_increase(self, tmp_path):
        cfg = make_config("Random33FG", tmp_path)
        results = run_experiment(cfg, 0)
        budgets = [r["budget_patches"] for r in results["loops"]]
        assert budgets == sorted(set(budgets))

    def test_uncertainty_method_manifests_have_scores(self, tmp_path):
        cfg = make_config("PE", tmp_path)
        run_experiment(cfg, 0)
        run_dir = tmp_path / "PE" / "seed_0"
        start = json.loads((run_dir / "loop_000.json").read_text())
        assert all(p["score"] is None for p in start["patches"])
        loop1 = json.loads((run_dir / "loop_001.json").read_text())
        assert all(isinstance(p["score"], float) for p in loop1["patches"])


def synthetic_results(out_dir, method, seed, dices, budgets=(6, 8, 10)):
    """Hand-built results.json for evaluation tests."""
    run_dir = Path(out_dir) / method / f"seed_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    loops = []
    for k, (b, d) in enumerate(zip(budgets, dices)):
        loops.append(
            {
                "loop": k,
                "manifest": f"loop_{k:03d}.json",
                "budget_patches": b,
                "fg_voxels_annotated": 10 * (k + 1),
                "fg_fraction_annotated": 0.1 * (k + 1),
                "per_image_dice": {"img": d},
                "mean_dice": d,
            }
        )
    payload = {
        "config": {"method": method},
        "dataset": "toy",
        "regime": "B10-Q2-L2",
        "method": method,
        "seed": seed,
        "num_classes": 2,
        "loops": loops,
    }
    (run_dir / "results.json").write_text(json.dumps(payload, sort_keys=True, indent=2))
    return run_dir


class TestEvaluation:
    def test_constant_curve_aubc_and_final(self, tmp_path):
        for seed in (0, 1):
            synthetic_results(tmp_path, "OnlyMethod", seed, [0.8, 0.8, 0.8])
        runs = discover_runs([tmp_path])
        report = build_report(runs)
        summary = report["groups"]["toy/B10-Q2-L2"]["methods"]["OnlyMethod"]
        assert summary["aubc_mean"] == pytest.approx(0.8)
        assert summary["final_dice_mean"] == pytest.approx(0.8)

    def test_identical_methods_ppm_zero(self, tmp_path):
        for method in ("A", "B"):
            for seed in (0, 1):
                synthetic_results(tmp_path, method, seed, [0.5, 0.6, 0.7 + 0.01 * seed])
        report = build_report(discover_runs([tmp_path]))
        matrix = np.array(report["ppm"]["matrix"])
        assert (matrix == 0.0).all()

    def test_dominant_method_wins(self, tmp_path):
        for seed in (0, 1, 2, 3):
            eps = 0.001 * seed
            synthetic_results(tmp_path, "good", seed, [0.8 + eps, 0.85 + eps, 0.9 + eps])
            synthetic_results(tmp_path, "bad", seed, [0.3 + eps, 0.35 + eps, 0.4 + eps])
        report = build_report(discover_runs([tmp_path]))
        methods = report["ppm"]["methods"]
        matrix = np.array(report["ppm"]["matrix"])
        gi, bi = methods.index("good"), methods.index("bad")
        assert matrix[gi, bi] == 1.0
        assert matrix[bi, gi] == 0.0
        assert report["win_lose"]["bad vs good"] == {"wins": 0, "losses": 3}

    def test_single_seed_rejected(self, tmp_path):
        synthetic_results(tmp_path, "A", 0, [0.5, 0.6, 0.7])
        with pytest.raises(RaggedResults):
            build_report(discover_runs([tmp_path]))

    def test_report_regeneration_identical_bytes(self, tmp_path):
        for method in ("A", "B"):
            for seed in (0, 1):
                synthetic_results(
                    tmp_path / "runs", method, seed, [0.5, 0.6 + 0.01 * seed, 0.7]
                )
        runs = discover_runs([tmp_path / "runs"])
        report = build_report(runs, tau_pairs=(("aubc", "final_dice"),))
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        write_report(report, runs, out1, figures=False)
        write_report(report, runs, out2, figures=False)
        for name in ("report.json", "results.csv", "report.md"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_csv_schema(self, tmp_path):
        synthetic_results(tmp_path, "A", 0, [0.5, 0.6, 0.7])
        rows = csv_rows(discover_runs([tmp_path]))
        assert rows[0] == CSV_HEADER
        first = rows[1].split(",")
        assert first[0] == "A"
        assert first[1] == "toy"
        assert first[2] == "B10-Q2-L2"
        assert [int(first[3]), int(first[4])] == [0, 0]
        assert int(first[5]) == 6
        assert int(first[6]) == 10
        assert float(first[7]) == 0.5

    def test_kendall_between_columns(self, tmp_path):
        for seed in (0, 1):
            synthetic_results(tmp_path, "A", seed, [0.5, 0.6, 0.9])
            synthetic_results(tmp_path, "B", seed, [0.4, 0.5, 0.6])
            synthetic_results(tmp_path, "C", seed, [0.3, 0.4, 0.5])
        report = build_report(
            discover_runs([tmp_path]), tau_pairs=(("aubc", "final_dice"),)
        )
        entry = report["kendall_tau"]["aubc vs final_dice"]
        assert entry["tau"] == 1.0
        assert entry["ranking_a"] == ["A", "B", "C"]

    def test_markdown_renders(self, tmp_path):
        for method in ("A", "B"):
            for seed in (0, 1):
                synthetic_results(tmp_path, method, seed, [0.5, 0.6, 0.7])
        report = build_report(discover_runs([tmp_path]))
        text = render_markdown(report)
        assert "Pairwise penalty matrix" in text
        assert "| A |" in text


class TestEndToEndEvaluation:
    def test_real_runs_through_report_with_figures(self, tmp_path):
        out = tmp_path / "runs"
        for method in ("Random", "Random66FG"):
            cfg = make_config(method, out)
            for seed in (0, 1):
                run_experiment(cfg, seed)
        runs = discover_runs([out])
        report = build_report(runs, tau_pairs=(("aubc", "final_dice"),))
        written = write_report(report, runs, tmp_path / "report", figures=True)
        names = {p.name for p in written}
        assert {
            "report.json",
            "results.csv",
            "report.md",
            "budget_curves.png",
            "ppm.png",
            "winlose.png",
            "fg_eff.png",
        } <= names
        for p in written:
            assert p.stat().st_size > 0
