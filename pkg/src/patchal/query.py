"""Query strategies for patch-based active learning.

Two families live here.  Uncertainty-driven selection walks each image's
score field in descending order, keeping a candidate only if its overlap
with everything already kept or annotated stays within the allowed
fraction, then pools the per-image survivors, optionally perturbs their
scores with Gumbel noise, and takes the global top-n.  Random baselines
draw patches by rejection sampling, optionally oversampling placements
centered on foreground classes or their borders.

Overlap is always measured as a fraction of the candidate box's volume.
Ties are broken lexicographically by (image id, origin) so every strategy
is fully deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .aggregate import ScoreField
from .errors import (
    ClassUncoverable,
    EmptyField,
    InsufficientCandidates,
    NoForeground,
)
from .volumes import (
    AnnotationMask,
    LabelVolume,
    PatchBox,
    Shape3,
    clamp_patch,
    overlap_fraction,
)

#: Rejection sampling gives up after this many attempts per requested patch.
RETRY_FACTOR = 1000

#: Attempts granted to one foreground-centered draw before it falls back to
#: a fully random draw (the fallback is counted on the emitted query).
FG_DRAW_ATTEMPTS = 200

SCORE_FLOOR = 1e-12

NOISE_NONE = "none"
NOISE_POWER = "power"
NOISE_SOFTRANK = "softrank"
_NOISE_KINDS = (NOISE_NONE, NOISE_POWER, NOISE_SOFTRANK)


@dataclass(frozen=True)
class Candidate:
    """One patch placement with its selection score (None for random draws)."""

    image_id: str
    box: PatchBox
    score: float | None = None


@dataclass(frozen=True)
class NoiseSpec:
    """Gumbel perturbation settings; ``beta`` is the inverse noise scale."""

    kind: str = NOISE_NONE
    beta: float = math.inf

    def __post_init__(self):
        if self.kind not in _NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not (self.beta > 0):
            raise ValueError(f"beta must be positive (or inf), got {self.beta}")


@dataclass(frozen=True)
class Query:
    """Ordered patch selection for one loop, plus its provenance."""

    loop_index: int
    method: str
    patches: tuple[Candidate, ...]
    seed: int
    fg_fallbacks: int = 0

    def to_manifest_dict(self) -> dict:
        out = {
            "loop": self.loop_index,
            "method": self.method,
            "seed": self.seed,
            "patches": [
                {
                    "image": c.image_id,
                    "origin": list(c.box.origin),
                    "size": list(c.box.size),
                    "score": None if c.score is None else float(c.score),
                }
                for c in self.patches
            ],
        }
        if self.fg_fallbacks:
            out["fg_fallbacks"] = self.fg_fallbacks
        return out


def _selection_key(c: Candidate):
    # Descending score, then (image id, origin) ascending.
    return (-c.score, c.image_id, c.box.origin)


# --- greedy per-image scan ----------------------------------------------------


def select_image_patches(
    field: ScoreField,
    labeled: AnnotationMask,
    o: float,
    cap: int,
) -> list[Candidate]:
    """Greedy overlap-constrained scan of one image's score field.

    Candidates are visited in strictly descending score order (ties by
    lexicographic origin); one is kept iff its overlap fraction with every
    kept candidate and with every labeled box stays within ``o``.  Stops
    after ``cap`` keeps.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    if not 0.0 <= o <= 1.0:
        raise ValueError(f"overlap must lie in [0, 1], got {o}")
    values = field.values
    if values.size == 0:
        raise EmptyField(f"score field for {field.image_id!r} has no candidates")

    scores = values.ravel().astype(np.float64)
    zs, ys, xs = np.unravel_index(np.arange(scores.size), values.shape)
    order = np.lexsort((xs, ys, zs, -scores))

    size = field.patch_size
    kept: list[Candidate] = []
    if o <= 0.0:
        occupied = np.array(labeled.voxel_mask)  # private writable copy
        for idx in order:
            origin = (int(zs[idx]), int(ys[idx]), int(xs[idx]))
            window = tuple(slice(p, p + s) for p, s in zip(origin, size))
            if occupied[window].any():
                continue
            occupied[window] = True
            kept.append(Candidate(field.image_id, PatchBox(origin, size), float(scores[idx])))
            if len(kept) >= cap:
                break
        return kept

    obstacles: list[PatchBox] = list(labeled.boxes)
    for idx in order:
        origin = (int(zs[idx]), int(ys[idx]), int(xs[idx]))
        box = PatchBox(origin, size)
        if o < 1.0 and any(overlap_fraction(box, other) > o for other in obstacles):
            continue
        obstacles.append(box)
        kept.append(Candidate(field.image_id, box, float(scores[idx])))
        if len(kept) >= cap:
            break
    return kept


# --- score perturbation ---------------------------------------------------------


def gumbel_noise(u, beta: float) -> np.ndarray:
    """Inverse-CDF Gumbel(0, 1/beta) samples from uniforms in [0, 1)."""
    u = np.asarray(u, dtype=np.float64)
    if math.isinf(beta):
        return np.zeros_like(u)
    u = np.maximum(u, np.finfo(np.float64).tiny)
    return -np.log(-np.log(u)) / beta


def perturb_scores(
    cands: Sequence[Candidate],
    spec: NoiseSpec,
    rng: np.random.Generator | None = None,
) -> list[Candidate]:
    """Replace candidate scores according to the noise spec.

    ``power`` maps each score s to ln(max(s, floor)) + eps and ``softrank``
    to -ln(rank) + eps with ranks assigned by descending raw score; eps is
    Gumbel(0, 1/beta).  ``none`` returns the candidates unchanged.  With
    beta = inf no randomness is drawn and the ordering of the perturbed
    scores equals the raw ordering.
    """
    if spec.kind == NOISE_NONE:
        return list(cands)
    n = len(cands)
    if n == 0:
        return []

    if spec.kind == NOISE_POWER:
        base = np.log(np.maximum([c.score for c in cands], SCORE_FLOOR))
    else:
        by_score = sorted(range(n), key=lambda i: _selection_key(cands[i]))
        ranks = np.empty(n, dtype=np.float64)
        for pos, i in enumerate(by_score):
            ranks[i] = pos + 1
        base = -np.log(ranks)

    if math.isinf(spec.beta):
        eps = np.zeros(n)
    else:
        if rng is None:
            raise ValueError("finite-beta perturbation requires an rng stream")
        eps = gumbel_noise(rng.random(n), spec.beta)
    return [replace(c, score=float(b + e)) for c, b, e in zip(cands, base, eps)]


def global_select(
    per_image: Iterable[Sequence[Candidate]],
    n: int,
    spec: NoiseSpec = NoiseSpec(),
    rng: np.random.Generator | None = None,
    *,
    loop_index: int = 0,
    method: str = "",
    seed: int = 0,
) -> Query:
    """Pool per-image candidates, perturb once, and take the global top-n.

    Noise is applied to the pooled patch-level scores, not inside the
    per-image scans: the per-image stage is purely about overlap
    feasibility.  Patches from different images never overlap, so no
    cross-image constraint is checked here.
    """
    pooled = [c for group in per_image for c in group]
    if len(pooled) < n:
        raise InsufficientCandidates(
            f"pool holds {len(pooled)} candidates but {n} were requested"
        )
    perturbed = perturb_scores(pooled, spec, rng)
    chosen = sorted(perturbed, key=_selection_key)[:n]
    return Query(loop_index, method, tuple(chosen), seed)


# --- random baselines ------------------------------------------------------------


class _AttemptBudget:
    def __init__(self, total: int):
        self.remaining = total

    def take(self) -> bool:
        if self.remaining <= 0:
            return False
        self.remaining -= 1
        return True


class _DrawState:
    """Rejection-sampling state shared by the random strategies."""

    def __init__(
        self,
        masks: Sequence[AnnotationMask],
        labels: Sequence[LabelVolume] | None,
        patch_size: Shape3,
        o: float,
        rng: np.random.Generator,
    ):
        if not masks:
            raise InsufficientCandidates("no images to draw from")
        if not 0.0 <= o <= 1.0:
            raise ValueError(f"overlap must lie in [0, 1], got {o}")
        if labels is not None:
            if len(labels) != len(masks):
                raise ValueError("masks and labels must be parallel sequences")
            for mask, label in zip(masks, labels):
                if mask.shape != label.shape:
                    raise ValueError(
                        f"mask/label shape mismatch for image {mask.image_id!r}"
                    )
        self.masks = list(masks)
        self.labels = list(labels) if labels is not None else None
        self.o = float(o)
        self.rng = rng
        self.sizes = [clamp_patch(patch_size, m.shape) for m in masks]
        self.selected: list[Candidate] = []
        self.fallbacks = 0
        if o <= 0.0:
            self._occupied = [np.array(m.voxel_mask) for m in masks]
        else:
            self._obstacles = [list(m.boxes) for m in masks]
        self._fg_classes: dict[int, tuple[int, ...]] = {}
        self._class_flat: dict[tuple[int, int], np.ndarray] = {}
        self._border_flat: dict[tuple[int, int], np.ndarray] = {}

    # -- geometry helpers

    def _admissible(self, i: int, box: PatchBox) -> bool:
        if self.o >= 1.0:
            return True
        if self.o <= 0.0:
            return not self._occupied[i][box.slices].any()
        return all(
            overlap_fraction(box, other) <= self.o for other in self._obstacles[i]
        )

    def _keep(self, i: int, box: PatchBox) -> None:
        if self.o <= 0.0:
            self._occupied[i][box.slices] = True
        elif self.o < 1.0:
            self._obstacles[i].append(box)
        self.selected.append(Candidate(self.masks[i].image_id, box, None))

    def _origin_from_center(self, i: int, center: Shape3) -> PatchBox:
        size = self.sizes[i]
        shape = self.masks[i].shape
        origin = tuple(
            int(np.clip(c - s // 2, 0, d - s)) for c, s, d in zip(center, size, shape)
        )
        return PatchBox(origin, size)

    # -- foreground lookups (lazy, cached per image)

    def fg_classes(self, i: int) -> tuple[int, ...]:
        if i not in self._fg_classes:
            label = self.labels[i]
            present = np.unique(label.data)
            self._fg_classes[i] = tuple(
                int(c) for c in present if 0 < c < label.num_classes
            )
        return self._fg_classes[i]

    def class_voxels(self, i: int, cls: int) -> np.ndarray:
        key = (i, cls)
        if key not in self._class_flat:
            self._class_flat[key] = np.flatnonzero(self.labels[i].data.ravel() == cls)
        return self._class_flat[key]

    def border_voxels(self, i: int, cls: int) -> np.ndarray:
        """Voxels of ``cls`` with at least one six-neighbor of another class."""
        key = (i, cls)
        if key not in self._border_flat:
            data = self.labels[i].data
            member = data == cls
            border = np.zeros_like(member)
            border[1:, :, :] |= member[1:, :, :] & (data[:-1, :, :] != cls)
            border[:-1, :, :] |= member[:-1, :, :] & (data[1:, :, :] != cls)
            border[:, 1:, :] |= member[:, 1:, :] & (data[:, :-1, :] != cls)
            border[:, :-1, :] |= member[:, :-1, :] & (data[:, 1:, :] != cls)
            border[:, :, 1:] |= member[:, :, 1:] & (data[:, :, :-1] != cls)
            border[:, :, :-1] |= member[:, :, :-1] & (data[:, :, 1:] != cls)
            self._border_flat[key] = np.flatnonzero(border.ravel())
        return self._border_flat[key]

    def images_with_class(self, cls: int) -> list[int]:
        return [i for i in range(len(self.masks)) if cls in self.fg_classes(i)]

    def images_with_foreground(self) -> list[int]:
        return [i for i in range(len(self.masks)) if self.fg_classes(i)]

    # -- draw primitives

    def draw_random(self, budget: _AttemptBudget) -> bool:
        rng = self.rng
        while budget.take():
            i = int(rng.integers(len(self.masks)))
            shape = self.masks[i].shape
            size = self.sizes[i]
            origin = tuple(
                int(rng.integers(d - s + 1)) for d, s in zip(shape, size)
            )
            box = PatchBox(origin, size)
            if self._admissible(i, box):
                self._keep(i, box)
                return True
        return False

    def _draw_centered(
        self,
        budget: _AttemptBudget,
        cls: int | None,
        on_border: bool,
    ) -> bool:
        if self.labels is None:
            raise ValueError("foreground-centered draws require ground-truth labels")
        eligible = (
            self.images_with_class(cls) if cls is not None else self.images_with_foreground()
        )
        if not eligible:
            raise NoForeground(
                "no image contains foreground"
                if cls is None
                else f"no image contains class {cls}"
            )
        rng = self.rng
        attempts = FG_DRAW_ATTEMPTS
        while attempts > 0 and budget.take():
            attempts -= 1
            i = eligible[int(rng.integers(len(eligible)))]
            c = cls if cls is not None else self.fg_classes(i)[
                int(rng.integers(len(self.fg_classes(i))))
            ]
            flat = self.border_voxels(i, c) if on_border else self.class_voxels(i, c)
            if flat.size == 0:
                # A class filling the whole volume has no border; center on it.
                flat = self.class_voxels(i, c)
                if flat.size == 0:
                    continue
            center = np.unravel_index(int(flat[int(rng.integers(flat.size))]), self.masks[i].shape)
            box = self._origin_from_center(i, tuple(int(v) for v in center))
            if self._admissible(i, box):
                self._keep(i, box)
                return True
        return False

    def draw_class_centered(self, budget: _AttemptBudget, cls: int | None = None) -> bool:
        return self._draw_centered(budget, cls, on_border=False)

    def draw_border_centered(self, budget: _AttemptBudget) -> bool:
        return self._draw_centered(budget, None, on_border=True)

    def draw_oversampled_with_fallback(self, budget: _AttemptBudget, on_border: bool) -> bool:
        """Foreground-centered draw, falling back to fully random when no
        admissible foreground placement can be found."""
        try:
            ok = self._draw_centered(budget, None, on_border=on_border)
        except NoForeground:
            ok = False
        if ok:
            return True
        self.fallbacks += 1
        return self.draw_random(budget)


def random_query(
    masks: Sequence[AnnotationMask],
    n: int,
    patch_size,
    o: float,
    rng: np.random.Generator,
    *,
    loop_index: int = 0,
    method: str = "Random",
    seed: int = 0,
) -> Query:
    """Uniform image choice, then uniform valid origin, rejecting overlaps."""
    state = _DrawState(masks, None, patch_size, o, rng)
    budget = _AttemptBudget(RETRY_FACTOR * n)
    for _ in range(n):
        if not state.draw_random(budget):
            raise InsufficientCandidates(
                f"could not place {n} patches at overlap <= {o} "
                f"({len(state.selected)} placed)"
            )
    return Query(loop_index, method, tuple(state.selected), seed)


def fg_aware_query(
    masks: Sequence[AnnotationMask],
    labels: Sequence[LabelVolume],
    n: int,
    patch_size,
    o: float,
    p_fg: float,
    rng: np.random.Generator,
    *,
    loop_index: int = 0,
    method: str = "RandomFG",
    seed: int = 0,
) -> Query:
    """Random baseline that oversamples foreground, simulating a human
    screening the image for structures.

    Each patch is fully random with probability 1 - p_fg; otherwise half
    of the oversampled draws are centered on a uniform voxel of a uniformly
    chosen foreground class and half on a uniform border voxel (a
    foreground voxel with a six-neighbor of a different class).  Draws that
    cannot place any foreground-centered patch fall back to fully random
    and are counted on the query.
    """
    if not 0.0 <= p_fg <= 1.0:
        raise ValueError(f"p_fg must lie in [0, 1], got {p_fg}")
    if p_fg == 0.0:
        return random_query(
            masks, n, patch_size, o, rng, loop_index=loop_index, method=method, seed=seed
        )
    state = _DrawState(masks, labels, patch_size, o, rng)
    budget = _AttemptBudget(RETRY_FACTOR * n)
    for _ in range(n):
        u = float(rng.random())
        if u < p_fg / 2.0:
            ok = state.draw_oversampled_with_fallback(budget, on_border=False)
        elif u < p_fg:
            ok = state.draw_oversampled_with_fallback(budget, on_border=True)
        else:
            ok = state.draw_random(budget)
        if not ok:
            raise InsufficientCandidates(
                f"could not place {n} patches at overlap <= {o} "
                f"({len(state.selected)} placed)"
            )
    return Query(loop_index, method, tuple(state.selected), seed, state.fallbacks)


def starting_budget(
    masks: Sequence[AnnotationMask],
    labels: Sequence[LabelVolume],
    budget_patches: int,
    patch_size,
    rng: np.random.Generator,
    *,
    o: float = 0.0,
    p_fg: float = 0.33,
    loop_index: int = 0,
    method: str = "StartingBudget",
    seed: int = 0,
) -> Query:
    """Initial allocation: every foreground class present in at least two
    patches, remainder drawn with 33% foreground oversampling.

    Phase one walks classes in ascending id order and draws class-centered
    patches until each appears in two selected patches (patches drawn for
    one class count toward every class they happen to contain).  Phase two
    fills the remaining budget like ``fg_aware_query``.
    """
    if budget_patches < 1:
        raise ValueError(f"budget must be >= 1, got {budget_patches}")
    num_classes = labels[0].num_classes
    if any(lv.num_classes != num_classes for lv in labels):
        raise ValueError("all label volumes must share one class count")

    state = _DrawState(masks, labels, patch_size, o, rng)
    budget = _AttemptBudget(RETRY_FACTOR * budget_patches)

    contain_counts = {c: 0 for c in range(1, num_classes)}

    def _credit(cand: Candidate) -> None:
        i = next(
            k for k, m in enumerate(state.masks) if m.image_id == cand.image_id
        )
        present = np.unique(labels[i].data[cand.box.slices])
        for c in present:
            c = int(c)
            if 0 < c < num_classes:
                contain_counts[c] += 1

    for cls in range(1, num_classes):
        if not state.images_with_class(cls):
            continue  # class absent from this dataset
        while contain_counts[cls] < 2:
            if len(state.selected) >= budget_patches:
                raise InsufficientCandidates(
                    f"budget of {budget_patches} patches exhausted before "
                    f"class {cls} appeared in two patches"
                )
            before = len(state.selected)
            if not state.draw_class_centered(budget, cls):
                raise ClassUncoverable(
                    f"no admissible patch covering class {cls} could be placed"
                )
            _credit(state.selected[before])

    while len(state.selected) < budget_patches:
        u = float(rng.random())
        if u < p_fg / 2.0:
            ok = state.draw_oversampled_with_fallback(budget, on_border=False)
        elif u < p_fg:
            ok = state.draw_oversampled_with_fallback(budget, on_border=True)
        else:
            ok = state.draw_random(budget)
        if not ok:
            raise InsufficientCandidates(
                f"could not fill the starting budget of {budget_patches} patches "
                f"({len(state.selected)} placed)"
            )

    return Query(loop_index, method, tuple(state.selected), seed, state.fallbacks)
