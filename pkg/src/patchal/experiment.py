"""Seeded end-to-end active-learning loop runner.

One run = one (config, seed) pair.  The flow is: allocate the starting
budget, then for each loop score the train-pool with the current model
(uncertainty methods only), query, grow the annotation, retrain from
scratch, and evaluate on the held-out test split.  Every loop writes its
query manifest (``loop_000.json`` for the start, then ``loop_001.json``
...) before training starts, so a crash loses at most the in-flight loop;
``results.json`` lands at the end.  All randomness flows through streams
keyed by (seed, loop, purpose), so a repeated run is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregate import build_sat, window_mean
from .config import (
    METHOD_RANDOM,
    ExperimentConfig,
)
from .errors import TooFewImages
from .metrics import dice_per_image
from .query import (
    Query,
    fg_aware_query,
    global_select,
    random_query,
    select_image_patches,
    starting_budget,
)
from .seeding import rng_stream
from .simlab import (
    generate_dataset,
    load_dataset,
    predict_ensemble,
    predict_labels,
    train,
)
from .uncertainty import bald, predictive_entropy
from .volumes import AnnotationMask, LabelVolume, PatchBox, Volume3D, clamp_patch

RESULTS_FILENAME = "results.json"


def split_dataset(ids: Sequence[str], seed: int) -> dict[str, list[str]]:
    """Deterministic 75/25 train-pool/test split (rounding favors the pool).

    The split depends only on the id list and the seed, never on the
    method, so all experiments on one dataset share it.
    """
    ids = sorted(ids)
    if len(ids) < 4:
        raise TooFewImages(f"need at least 4 images to split, got {len(ids)}")
    rng = rng_stream(seed, "split")
    order = rng.permutation(len(ids))
    n_test = max(1, int(len(ids) * 0.25))
    shuffled = [ids[i] for i in order]
    return {
        "test": sorted(shuffled[:n_test]),
        "trainpool": sorted(shuffled[n_test:]),
    }


@dataclass
class _RunData:
    dataset_name: str
    num_classes: int
    trainpool: list[str]
    test: list[str]
    images: dict[str, Volume3D]
    labels: dict[str, LabelVolume]


def _load_run_data(cfg: ExperimentConfig) -> _RunData:
    if isinstance(cfg.dataset, str):
        ds = load_dataset(cfg.dataset)
        split = ds.split or split_dataset(ds.ids, 0)
        return _RunData(
            cfg.dataset_name, ds.num_classes,
            sorted(split["trainpool"]), sorted(split["test"]),
            ds.images, ds.labels,
        )
    ds = generate_dataset(cfg.dataset)
    split = split_dataset(ds.ids, cfg.dataset.seed)
    return _RunData(
        cfg.dataset_name, ds.num_classes,
        split["trainpool"], split["test"],
        ds.images, ds.labels,
    )


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_json(path: Path, obj) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(_canonical_json(obj))
    tmp.replace(path)


def _apply_query(masks: dict[str, AnnotationMask], query: Query) -> None:
    for cand in query.patches:
        masks[cand.image_id] = masks[cand.image_id].union(cand.box)


def _fg_annotated(
    trainpool: Sequence[str],
    masks: dict[str, AnnotationMask],
    labels: dict[str, LabelVolume],
) -> int:
    total = 0
    for image_id in trainpool:
        fg = labels[image_id].foreground_mask
        total += int((fg & masks[image_id].voxel_mask).sum())
    return total


def _score_query(
    cfg: ExperimentConfig,
    data: _RunData,
    masks: dict[str, AnnotationMask],
    model,
    loop: int,
    seed: int,
) -> Query:
    """Uncertainty-driven query: score, scan per image, pool, select."""
    kind = cfg.uncertainty_kind
    qs = cfg.label_regime.query_size
    per_image = []
    for image_id in data.trainpool:
        mask = masks[image_id]
        if mask.is_saturated():
            continue
        stack = predict_ensemble(model, data.images[image_id])
        umap = predictive_entropy(stack, image_id) if kind == "PE" else bald(stack, image_id)
        effective = clamp_patch(cfg.patch_size, mask.shape)
        field = window_mean(build_sat(umap.values), effective, image_id=image_id)
        cands = select_image_patches(field, mask, cfg.overlap, cap=qs)
        if cands:
            per_image.append(cands)
    return global_select(
        per_image,
        qs,
        cfg.effective_noise,
        rng_stream(seed, loop, "noise"),
        loop_index=loop,
        method=cfg.method,
        seed=seed,
    )


def _random_style_query(
    cfg: ExperimentConfig,
    data: _RunData,
    masks: dict[str, AnnotationMask],
    loop: int,
    seed: int,
) -> Query:
    qs = cfg.label_regime.query_size
    mask_list = [masks[i] for i in data.trainpool]
    rng = rng_stream(seed, loop, "query")
    if cfg.method == METHOD_RANDOM:
        return random_query(
            mask_list, qs, cfg.patch_size, cfg.overlap, rng,
            loop_index=loop, method=cfg.method, seed=seed,
        )
    label_list = [data.labels[i] for i in data.trainpool]
    return fg_aware_query(
        mask_list, label_list, qs, cfg.patch_size, cfg.overlap, cfg.fg_share, rng,
        loop_index=loop, method=cfg.method, seed=seed,
    )


def _train_and_evaluate(
    cfg: ExperimentConfig,
    data: _RunData,
    masks: dict[str, AnnotationMask],
    loop: int,
    seed: int,
):
    model = train(
        cfg.learner,
        [data.images[i] for i in data.trainpool],
        [masks[i] for i in data.trainpool],
        [data.labels[i] for i in data.trainpool],
        rng_stream(seed, loop, "train"),
    )
    per_image = {}
    for image_id in data.test:
        pred = predict_labels(model, data.images[image_id])
        per_image[image_id] = dice_per_image(
            pred, data.labels[image_id], data.num_classes
        )
    mean = float(np.mean(list(per_image.values()))) if per_image else 0.0
    return model, per_image, mean


def run_experiment(cfg: ExperimentConfig, seed: int, run_dir=None) -> dict:
    """Execute one seeded run and persist its manifests and results.

    Returns the results dictionary that was written to ``results.json``.
    """
    regime = cfg.label_regime
    data = _load_run_data(cfg)
    if run_dir is None:
        run_dir = Path(cfg.output_dir) / cfg.method / f"seed_{seed}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    masks = {
        i: AnnotationMask(i, data.images[i].shape) for i in data.trainpool
    }
    fg_total = sum(
        int(data.labels[i].foreground_mask.sum()) for i in data.trainpool
    )

    records = []
    cumulative_patches = 0

    def _record(loop: int, query: Query, mean_dice: float, per_image: dict) -> None:
        fg_annotated = _fg_annotated(data.trainpool, masks, data.labels)
        records.append(
            {
                "loop": loop,
                "manifest": f"loop_{loop:03d}.json",
                "budget_patches": cumulative_patches,
                "fg_voxels_annotated": fg_annotated,
                "fg_fraction_annotated": (fg_annotated / fg_total) if fg_total else 0.0,
                "per_image_dice": {k: per_image[k] for k in sorted(per_image)},
                "mean_dice": mean_dice,
            }
        )

    # Loop 0: starting allocation, then the first training round.
    start_query = starting_budget(
        [masks[i] for i in data.trainpool],
        [data.labels[i] for i in data.trainpool],
        regime.starting_budget,
        cfg.patch_size,
        rng_stream(seed, 0, "query"),
        o=cfg.overlap,
        loop_index=0,
        method=cfg.method,
        seed=seed,
    )
    _write_json(run_dir / "loop_000.json", start_query.to_manifest_dict())
    _apply_query(masks, start_query)
    cumulative_patches += len(start_query.patches)
    model, per_image, mean_dice = _train_and_evaluate(cfg, data, masks, 0, seed)
    _record(0, start_query, mean_dice, per_image)

    for loop in range(1, regime.num_loops + 1):
        if cfg.uncertainty_kind is not None:
            query = _score_query(cfg, data, masks, model, loop, seed)
        else:
            query = _random_style_query(cfg, data, masks, loop, seed)
        _write_json(run_dir / f"loop_{loop:03d}.json", query.to_manifest_dict())
        _apply_query(masks, query)
        cumulative_patches += len(query.patches)
        model, per_image, mean_dice = _train_and_evaluate(cfg, data, masks, loop, seed)
        _record(loop, query, mean_dice, per_image)

    assert cumulative_patches == regime.total_budget_patches, (
        "budget accounting drifted: "
        f"{cumulative_patches} != {regime.total_budget_patches}"
    )

    results = {
        "config": cfg.to_dict(),
        "dataset": data.dataset_name,
        "regime": regime.regime_id,
        "method": cfg.method,
        "seed": seed,
        "num_classes": data.num_classes,
        "loops": records,
    }
    _write_json(run_dir / RESULTS_FILENAME, results)
    return results


def run_all_seeds(cfg: ExperimentConfig) -> list[dict]:
    return [run_experiment(cfg, seed) for seed in cfg.seeds]


def full_training_reference(cfg: ExperimentConfig, seed: int) -> float:
    """Mean test Dice after training on the fully annotated train-pool.

    This is the full-data anchor for the foreground-efficiency fit.
    """
    data = _load_run_data(cfg)
    masks = {}
    for i in data.trainpool:
        shape = data.images[i].shape
        masks[i] = AnnotationMask(i, shape, (PatchBox((0, 0, 0), shape),))
    _, _, mean_dice = _train_and_evaluate(cfg, data, masks, 0, seed)
    return mean_dice
