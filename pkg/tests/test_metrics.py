import itertools
import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from patchal.errors import (
    DegenerateCurve,
    DegenerateFit,
    MismatchedItems,
    RaggedResults,
    ShapeMismatch,
    TooFewSamples,
)
from patchal.metrics import (
    BudgetCurve,
    FgEffInput,
    _decay_model,
    aubc,
    dice_per_image,
    fit_fg_eff,
    kendall_tau,
    ppm,
    welch_t_test,
)
from patchal.volumes import LabelVolume


def label(arr, classes=2):
    return LabelVolume(np.asarray(arr, dtype=np.uint8), classes)


class TestDice:
    def test_identical_is_one(self):
        arr = np.zeros((4, 4, 4), dtype=np.uint8)
        arr[1:3, 1:3, 1:3] = 1
        assert dice_per_image(label(arr), label(arr), 2) == 1.0

    def test_disjoint_same_class_is_zero(self):
        a = np.zeros((4, 4, 4), dtype=np.uint8)
        b = np.zeros((4, 4, 4), dtype=np.uint8)
        a[0, 0, 0] = 1
        b[3, 3, 3] = 1
        assert dice_per_image(label(a), label(b), 2) == 0.0

    def test_partial_overlap(self):
        # |P| = 4, |G| = 4, |P & G| = 2 -> 2*2/8 = 0.5
        p = np.zeros((1, 1, 8), dtype=np.uint8)
        g = np.zeros((1, 1, 8), dtype=np.uint8)
        p[0, 0, 0:4] = 1
        g[0, 0, 2:6] = 1
        assert dice_per_image(label(p), label(g), 2) == 0.5

    def test_class_absent_from_both_excluded(self):
        # Class 2 appears nowhere: the mean covers class 1 only.
        p = np.zeros((2, 2, 2), dtype=np.uint8)
        g = np.zeros((2, 2, 2), dtype=np.uint8)
        p[0, 0, 0] = 1
        g[0, 0, 0] = 1
        assert dice_per_image(label(p, 3), label(g, 3), 3) == 1.0

    def test_class_in_one_side_scores_zero(self):
        p = np.zeros((2, 2, 2), dtype=np.uint8)
        g = np.zeros((2, 2, 2), dtype=np.uint8)
        g[0, 0, 0] = 1  # missed structure
        assert dice_per_image(label(p), label(g), 2) == 0.0

    def test_all_background(self):
        z = np.zeros((2, 2, 2), dtype=np.uint8)
        assert dice_per_image(label(z), label(z), 2) == 1.0

    def test_symmetry(self, rng):
        for _ in range(50):
            a = rng.integers(0, 3, size=(4, 4, 4)).astype(np.uint8)
            b = rng.integers(0, 3, size=(4, 4, 4)).astype(np.uint8)
            assert dice_per_image(label(a, 3), label(b, 3), 3) == pytest.approx(
                dice_per_image(label(b, 3), label(a, 3), 3)
            )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dice_per_image(
                label(np.zeros((2, 2, 2), dtype=np.uint8)),
                label(np.zeros((2, 2, 3), dtype=np.uint8)),
                2,
            )


class TestAubc:
    def test_constant_curve_returns_constant(self):
        curve = BudgetCurve(((100, 0.8), (200, 0.8), (300, 0.8)))
        assert aubc(curve) == pytest.approx(0.8, abs=1e-12)

    def test_triangle(self):
        assert aubc(BudgetCurve(((0, 0.0), (1, 1.0)))) == pytest.approx(0.5)

    def test_matches_riemann_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 10))
            budgets = np.cumsum(rng.integers(1, 50, size=n)).astype(float)
            values = rng.random(n)
            curve = BudgetCurve(tuple(zip(budgets, values)))
            # Fine Riemann sum over the piecewise-linear interpolant.
            grid = np.linspace(budgets[0], budgets[-1], 200_001)
            interp = np.interp(grid, budgets, values)
            oracle = np.trapezoid(interp, grid) / (budgets[-1] - budgets[0])
            assert aubc(curve) == pytest.approx(oracle, abs=1e-9)

    def test_bounds(self, rng):
        for _ in range(20):
            n = int(rng.integers(2, 8))
            budgets = np.cumsum(rng.integers(1, 20, size=n)).astype(float)
            values = rng.random(n)
            curve = BudgetCurve(tuple(zip(budgets, values)))
            assert values.min() - 1e-12 <= aubc(curve) <= values.max() + 1e-12

    def test_degenerate(self):
        with pytest.raises(DegenerateCurve):
            aubc(BudgetCurve(((10, 0.5),)))


class TestFgEff:
    def make_input(self, gamma, t0=0.03, y0=0.45, yfull=0.75, n=12, sigma=0.0, rng=None):
        span = min(1.0 - t0, 5.0 / max(abs(gamma), 1.0))
        t = t0 + np.linspace(0.0, span, n)
        y = (y0 - yfull) * np.exp(-gamma * (t - t0)) + yfull
        if sigma > 0:
            y = y + rng.normal(0.0, sigma, size=n)
        return FgEffInput(tuple(zip(t, y)), t0, y0, yfull)

    def test_recovers_forward_generated_gamma(self):
        inp = self.make_input(5.0)
        assert fit_fg_eff(inp) == pytest.approx(5.0, abs=1e-4)

    def test_recovers_negative_gamma(self):
        inp = self.make_input(-7.5)
        assert fit_fg_eff(inp) == pytest.approx(-7.5, rel=1e-4)

    def test_flat_duplicates_give_zero(self):
        inp = FgEffInput(((0.03, 0.45), (0.03, 0.45), (0.03, 0.45)), 0.03, 0.45, 0.75)
        assert fit_fg_eff(inp) == 0.0

    def test_model_passes_through_anchor_for_every_gamma(self):
        # With anchors t0=0.028, yfull=0.705, y(t0)=0.472 the model value at
        # t = t0 is 0.472 regardless of the rate.
        inp = FgEffInput(((0.1, 0.6),), 0.028, 0.472, 0.705)
        for gamma in (-50.0, -1.0, 0.0, 3.0, 200.0):
            value = _decay_model(np.array([0.028]), gamma, inp)
            assert value[0] == pytest.approx(0.472, abs=1e-12)

    def test_local_optimality(self, rng):
        for gamma in (2.0, -3.0, 20.0):
            inp = self.make_input(gamma, sigma=0.01, rng=rng)
            got = fit_fg_eff(inp)
            t = np.array([p[0] for p in inp.points])
            y = np.array([p[1] for p in inp.points])

            def sse(g):
                r = y - _decay_model(t, g, inp)
                return float(r @ r)

            assert sse(got) <= sse(got + 0.01) + 1e-12
            assert sse(got) <= sse(got - 0.01) + 1e-12

    def test_degenerate_fit(self):
        with pytest.raises(DegenerateFit):
            fit_fg_eff(FgEffInput(((0.1, 0.5),), 0.0, 0.7, 0.7))


class TestWelch:
    def test_identical_samples_p_one(self):
        a = [0.5, 0.6, 0.7]
        assert welch_t_test(a, a) == pytest.approx(1.0)

    def test_zero_variance_unequal_means(self):
        assert welch_t_test([0.5, 0.5], [0.6, 0.6]) == 0.0

    def test_separated_samples(self):
        a = [0.9, 0.91, 0.89, 0.9]
        b = [0.5, 0.51, 0.49, 0.5]
        assert welch_t_test(a, b) < 1e-6

    def test_matches_scipy(self, rng):
        for _ in range(50):
            a = rng.normal(0.0, 1.0, size=int(rng.integers(3, 12)))
            b = rng.normal(0.3, 2.0, size=int(rng.integers(3, 12)))
            expected = scipy_stats.ttest_ind(a, b, equal_var=False).pvalue
            assert welch_t_test(a, b) == pytest.approx(expected, rel=1e-10)

    def test_false_positive_rate(self):
        rng = np.random.default_rng(2024)
        rejections = 0
        trials = 1000
        for _ in range(trials):
            a = rng.normal(size=20)
            b = rng.normal(size=20)
            if welch_t_test(a, b) < 0.05:
                rejections += 1
        assert abs(rejections / trials - 0.05) <= 0.02

    def test_too_few_samples(self):
        with pytest.raises(TooFewSamples):
            welch_t_test([0.5], [0.6, 0.7])


class TestPpm:
    def test_identical_methods_all_zero(self):
        cells = {
            ("d", "r", b): {"A": [0.5, 0.6, 0.7], "B": [0.5, 0.6, 0.7]}
            for b in (10, 20)
        }
        result = ppm(cells)
        assert (result.matrix == 0.0).all()

    def test_dominant_method_wins_every_cell(self, rng):
        cells = {}
        for b in range(4):
            base = rng.normal(0.5, 0.01, size=4)
            cells[("d", "r", b)] = {
                "strong": list(base + 0.4),
                "weak_1": list(base),
                "weak_2": list(base - 0.05),
            }
        result = ppm(cells)
        i = result.methods.index("strong")
        for j, m in enumerate(result.methods):
            if m != "strong":
                assert result.matrix[i, j] == 1.0

    def test_antisymmetric_wins(self, rng):
        cells = {}
        for b in range(6):
            cells[("d", "r", b)] = {
                "A": list(rng.normal(0.5, 0.1, size=4)),
                "B": list(rng.normal(0.5, 0.1, size=4)),
            }
        result = ppm(cells)
        assert result.matrix[0, 1] + result.matrix[1, 0] <= 1.0
        assert result.matrix[0, 0] == 0.0 and result.matrix[1, 1] == 0.0

    def test_ragged_methods_raise(self):
        cells = {
            ("d", "r", 1): {"A": [0.1, 0.2], "B": [0.1, 0.2]},
            ("d", "r", 2): {"A": [0.1, 0.2]},
        }
        with pytest.raises(RaggedResults):
            ppm(cells)

    def test_single_seed_raises(self):
        with pytest.raises(RaggedResults):
            ppm({("d", "r", 1): {"A": [0.1], "B": [0.2]}})


def brute_force_tau(rank_a, rank_b):
    pos_a = {item: i for i, item in enumerate(rank_a)}
    pos_b = {item: i for i, item in enumerate(rank_b)}
    items = list(rank_a)
    c = d = 0
    for x, y in itertools.combinations(items, 2):
        sign_a = pos_a[x] - pos_a[y]
        sign_b = pos_b[x] - pos_b[y]
        if sign_a * sign_b > 0:
            c += 1
        else:
            d += 1
    n = len(items)
    return (c - d) / (n * (n - 1) / 2)


class TestKendallTau:
    def test_identical(self):
        tau, _ = kendall_tau([1, 2, 3, 4], [1, 2, 3, 4])
        assert tau == 1.0

    def test_reversed(self):
        tau, _ = kendall_tau([1, 2, 3, 4], [4, 3, 2, 1])
        assert tau == -1.0

    def test_single_swap(self):
        tau, _ = kendall_tau([1, 2, 3, 4], [1, 3, 2, 4])
        assert tau == pytest.approx(4 / 6)

    def test_exhaustive_small_n(self):
        for n in range(2, 7):
            base = list(range(n))
            for perm in itertools.permutations(base):
                tau, _ = kendall_tau(base, list(perm))
                assert tau == pytest.approx(brute_force_tau(base, list(perm)))

    def test_exact_p_matches_enumeration(self):
        # Oracle: enumerate the full null distribution of tau for small n.
        for n in (3, 4, 5):
            base = list(range(n))
            taus = [
                brute_force_tau(base, list(perm))
                for perm in itertools.permutations(base)
            ]
            taus = np.array(taus)
            for perm in itertools.permutations(base):
                tau, p = kendall_tau(base, list(perm))
                expected = float((np.abs(taus) >= abs(tau) - 1e-12).mean())
                assert p == pytest.approx(expected, abs=1e-12)

    def test_normal_approximation_for_large_n(self):
        n = 12
        a = list(range(n))
        b = list(range(n))
        b[0], b[1] = b[1], b[0]
        tau, p = kendall_tau(a, b)
        assert 0.0 < p <= 1.0
        # Nearly identical rankings: strongly significant correlation.
        assert p < 1e-4

    def test_mismatched_items(self):
        with pytest.raises(MismatchedItems):
            kendall_tau([1, 2, 3], [1, 2, 4])
        with pytest.raises(MismatchedItems):
            kendall_tau([1, 1, 2], [1, 2, 1])
