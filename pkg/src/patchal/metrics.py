"""Evaluation suite: Dice, budget-curve area, foreground-efficiency decay
fits, pairwise penalty matrices with Welch tests, and Kendall's tau.

Conventions worth knowing:

* Dice averages over foreground classes only; a class absent from both
  prediction and ground truth is excluded from the mean, while a class
  present in exactly one of them scores zero.  This keeps "missed a small
  structure entirely" representable as a Dice of 0.
* The budget-curve area is the trapezoid integral normalized by the budget
  span, so a constant curve returns its constant.
* The foreground-efficiency value is the decay rate gamma of
  ``y(t) = (y0 - y_full) * exp(-gamma * (t - t0)) + y_full`` fitted by
  least squares over a bracketed scalar search; negative rates are legal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import (
    DegenerateCurve,
    DegenerateFit,
    MismatchedItems,
    RaggedResults,
    ShapeMismatch,
    TooFewSamples,
)
from .volumes import UNLABELED, LabelVolume

GAMMA_BOUND = 1.0e4
_GAMMA_TOL = 1e-9
_EXP_CLIP = 700.0


@dataclass(frozen=True)
class BudgetCurve:
    """Mean Dice as a function of annotated patches, for one seeded run."""

    points: tuple[tuple[float, float], ...]
    seed_id: int = 0
    method_id: str = ""

    def __post_init__(self):
        pts = tuple((float(b), float(v)) for b, v in self.points)
        budgets = [b for b, _ in pts]
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ValueError("budgets must be strictly increasing")
        if any(not 0.0 <= v <= 1.0 for _, v in pts):
            raise ValueError("curve values must lie in [0, 1]")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class FgEffInput:
    """Point cloud plus the empirically estimated anchors for the decay fit.

    ``t`` is the fraction of ground-truth foreground voxels annotated.
    The anchors are estimated before the fit: ``t0_hat``/``y0_hat`` on the
    starting budget and ``yfull_hat`` from training on everything.
    """

    points: tuple[tuple[float, float], ...]
    t0_hat: float
    y0_hat: float
    yfull_hat: float

    def __post_init__(self):
        pts = tuple((float(t), float(y)) for t, y in self.points)
        if not pts:
            raise ValueError("at least one point is required")
        if any(not 0.0 <= t <= 1.0 for t, _ in pts):
            raise ValueError("t values must lie in [0, 1]")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class PpmResult:
    """Pairwise penalty matrix plus the underlying win counts."""

    methods: tuple[str, ...]
    matrix: np.ndarray  # fractions in [0, 1], diagonal 0
    wins: np.ndarray  # integer win counts per ordered pair
    num_cells: int


def dice_per_image(pred: LabelVolume, gt: LabelVolume, num_classes: int) -> float:
    """Mean Dice over foreground classes for one image pair."""
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if (pred.data == UNLABELED).any() or (gt.data == UNLABELED).any():
        raise ValueError("dice inputs must not contain the UNLABELED sentinel")

    p = pred.data.ravel().astype(np.int64)
    g = gt.data.ravel().astype(np.int64)
    joint = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    confusion = joint.reshape(num_classes, num_classes)
    gt_counts = confusion.sum(axis=1)
    pred_counts = confusion.sum(axis=0)

    scores = []
    for c in range(1, num_classes):
        denom = int(pred_counts[c] + gt_counts[c])
        if denom == 0:
            continue
        scores.append(2.0 * int(confusion[c, c]) / denom)
    return float(np.mean(scores)) if scores else 1.0


def aubc(curve: BudgetCurve) -> float:
    """Trapezoid area under the budget curve, normalized by the budget span."""
    pts = curve.points
    if len(pts) < 2:
        raise DegenerateCurve("curve needs at least two points")
    span = pts[-1][0] - pts[0][0]
    if span <= 0:
        raise DegenerateCurve("budget span is zero")
    area = 0.0
    for (b1, v1), (b2, v2) in zip(pts, pts[1:]):
        area += (b2 - b1) * (v1 + v2) / 2.0
    return area / span


def _decay_model(t: np.ndarray, gamma: float, inp: FgEffInput) -> np.ndarray:
    exponent = np.clip(-gamma * (t - inp.t0_hat), -_EXP_CLIP, _EXP_CLIP)
    return (inp.y0_hat - inp.yfull_hat) * np.exp(exponent) + inp.yfull_hat


def fit_fg_eff(inp: FgEffInput) -> float:
    """Least-squares decay rate of the gap to full-data performance.

    The residual is minimized over a bracketed scalar search on
    [-GAMMA_BOUND, GAMMA_BOUND]; when the data carry no decay information
    (zero residual everywhere) the smallest-magnitude solution, 0, is
    returned.
    """
    if abs(inp.yfull_hat - inp.y0_hat) < 1e-12:
        raise DegenerateFit("y0_hat equals yfull_hat; the decay rate is undefined")

    t = np.array([p[0] for p in inp.points])
    y = np.array([p[1] for p in inp.points])

    def sse(gamma: float) -> float:
        # Residuals blow up fast at extreme rates; inf is a fine objective
        # value for the minimizer, so only silence the overflow warning.
        with np.errstate(over="ignore"):
            r = y - _decay_model(t, gamma, inp)
            return float(r @ r)

    # Coarse bracketing: dense near the origin where realistic rates live,
    # sparse out to the bound, then a bounded refinement inside the best cell.
    grid = np.unique(
        np.concatenate(
            [
                np.linspace(-200.0, 200.0, 4001),
                np.linspace(-GAMMA_BOUND, GAMMA_BOUND, 2001),
            ]
        )
    )
    values = np.array([sse(g) for g in grid])
    best = int(values.argmin())
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, grid.size - 1)]
    result = optimize.minimize_scalar(
        sse, bounds=(lo, hi), method="bounded", options={"xatol": _GAMMA_TOL}
    )
    gamma = float(result.x)

    # No decay information: prefer the flat solution.
    if sse(0.0) <= sse(gamma) * (1.0 + 1e-12) + 1e-18:
        return 0.0
    return gamma


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sided Welch t-test p-value for unequal-variance samples."""
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    if xa.size < 2 or xb.size < 2:
        raise TooFewSamples("both samples need at least two values")
    var_a = xa.var(ddof=1)
    var_b = xb.var(ddof=1)
    if var_a == 0.0 and var_b == 0.0:
        return 1.0 if xa.mean() == xb.mean() else 0.0
    se2 = var_a / xa.size + var_b / xb.size
    t_stat = (xa.mean() - xb.mean()) / math.sqrt(se2)
    dof = se2 * se2 / (
        (var_a / xa.size) ** 2 / (xa.size - 1) + (var_b / xb.size) ** 2 / (xb.size - 1)
    )
    return float(2.0 * stats.t.sf(abs(t_stat), dof))


def ppm(
    cells: Mapping, alpha: float = 0.05
) -> PpmResult:
    """Fraction of cells where one method significantly beats another.

    ``cells`` maps a cell key (e.g. a (dataset, regime, budget) tuple) to a
    mapping of method name to its per-seed samples.  Every cell must carry
    the same methods with at least two seeds each.
    """
    if not cells:
        raise RaggedResults("no cells supplied")
    cell_keys = sorted(cells)
    methods = tuple(sorted(cells[cell_keys[0]]))
    if len(methods) < 1:
        raise RaggedResults("cells carry no methods")
    for key in cell_keys:
        if tuple(sorted(cells[key])) != methods:
            raise RaggedResults(f"cell {key!r} does not share the common method set")
        for m, samples in cells[key].items():
            if len(samples) < 2:
                raise RaggedResults(f"cell {key!r} method {m!r} has fewer than 2 seeds")

    n = len(methods)
    wins = np.zeros((n, n), dtype=np.int64)
    for key in cell_keys:
        for i, mi in enumerate(methods):
            for j, mj in enumerate(methods):
                if i == j:
                    continue
                sa = np.asarray(cells[key][mi], dtype=np.float64)
                sb = np.asarray(cells[key][mj], dtype=np.float64)
                if welch_t_test(sa, sb) < alpha and sa.mean() > sb.mean():
                    wins[i, j] += 1
    matrix = wins.astype(np.float64) / len(cell_keys)
    return PpmResult(methods, matrix, wins, len(cell_keys))


def _mahonian_row(n: int) -> np.ndarray:
    """Counts of permutations of n items by inversion number."""
    row = np.zeros(n * (n - 1) // 2 + 1, dtype=np.float64)
    row[0] = 1.0
    for m in range(2, n + 1):
        prefix = np.concatenate([[0.0], np.cumsum(row)])
        new = np.zeros_like(row)
        top = m * (m - 1) // 2
        for k in range(top + 1):
            lo = max(0, k - (m - 1))
            new[k] = prefix[k + 1] - prefix[lo]
        row = new
    return row


def kendall_tau(rank_a: Sequence, rank_b: Sequence) -> tuple[float, float]:
    """Kendall's tau between two total orders over the same items.

    Returns (tau, two-sided p).  The p-value uses the exact permutation
    distribution for n <= 8 and the normal approximation above that.
    """
    items_a = list(rank_a)
    items_b = list(rank_b)
    if len(set(items_a)) != len(items_a) or len(set(items_b)) != len(items_b):
        raise MismatchedItems("rankings must not contain duplicate items")
    if set(items_a) != set(items_b):
        raise MismatchedItems("rankings must cover the same item set")
    n = len(items_a)
    if n < 2:
        raise MismatchedItems("rankings need at least two items")

    pos_b = {item: i for i, item in enumerate(items_b)}
    seq = [pos_b[item] for item in items_a]
    discordant = sum(
        1 for i in range(n) for j in range(i + 1, n) if seq[i] > seq[j]
    )
    total_pairs = n * (n - 1) // 2
    concordant = total_pairs - discordant
    tau = (concordant - discordant) / total_pairs

    if n <= 8:
        counts = _mahonian_row(n)
        taus = (total_pairs - 2 * np.arange(counts.size)) / total_pairs
        mass = counts[np.abs(taus) >= abs(tau) - 1e-12].sum()
        p = float(mass / counts.sum())
    else:
        var = n * (n - 1) * (2 * n + 5) / 18.0
        z = (concordant - discordant) / math.sqrt(var)
        p = float(math.erfc(abs(z) / math.sqrt(2.0)))
    return float(tau), p
