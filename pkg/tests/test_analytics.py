import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from dispersion.analytics import (
    Regime,
    Side,
    classify_regime,
    drift_lower_bounds,
    drift_upper_bound,
    expected_unhappy_exact,
    gw_survival_at,
    gw_survival_bounds,
    gw_survival_exact,
    gw_survival_probability,
    hitting_tail_bound,
    predicted_scale,
    tail_thresholds,
    traversal_bound,
    tree_survival_probability,
)
from dispersion.engine import ParameterError, ProcessParams

GW_EPS = (-0.3, -0.1, -0.01, 0.0, 0.01, 0.1, 0.3)


def enumerate_expected_unhappy(n, m, u):
    """Brute-force E[U'] over all n**u destination tuples (marked bins 0..h-1)."""
    h = m - u
    total = Fraction(0)
    for dests in itertools.product(range(n), repeat=u):
        counts = [0] * n
        for d in dests:
            counts[d] += 1
        new = sum(c + 1 for c in counts[:h] if c >= 1) + sum(c for c in counts[h:] if c >= 2)
        total += new
    return total / n**u


class TestExpectedUnhappy:
    def test_values(self):
        assert expected_unhappy_exact(ProcessParams(2, 2), 2) == pytest.approx(1.0, abs=1e-15)
        assert expected_unhappy_exact(ProcessParams(3, 2), 2) == pytest.approx(2 / 3, abs=1e-15)
        assert expected_unhappy_exact(ProcessParams(50, 20), 0) == 0.0

    @pytest.mark.parametrize("n,m", [(3, 3), (4, 3), (5, 4), (6, 5)])
    def test_matches_enumeration(self, n, m):
        p = ProcessParams(n, m)
        for u in range(1, m + 1):
            expect = float(enumerate_expected_unhappy(n, m, u))
            assert expected_unhappy_exact(p, u) == pytest.approx(expect, rel=1e-12)

    def test_range(self):
        with pytest.raises(ParameterError):
            expected_unhappy_exact(ProcessParams(10, 5), 6)


class TestDrift:
    def test_lower_values(self):
        lo1, lo2 = drift_lower_bounds(ProcessParams(100, 50), 10)
        assert lo1 == pytest.approx(6.5)
        assert lo2 == pytest.approx(10 / 3)
        assert drift_lower_bounds(ProcessParams(100, 50), 0) == (0.0, 0.0)

    def test_lower_values_small_eps(self):
        # (1 + 0.01) * 100 - 7 * 100**2 / (2 * 10**4) = 101 - 3.5
        lo1, lo2 = drift_lower_bounds(ProcessParams(10_000, 5050), 100)
        assert lo1 == pytest.approx(97.5)
        assert lo2 == pytest.approx(101 / 3)

    def test_upper_values(self):
        assert drift_upper_bound(ProcessParams(100, 50), 10) == pytest.approx(9.0)
        assert drift_upper_bound(ProcessParams(100, 50), 0) == 0.0

    def test_upper_at_eps_one_is_allowed(self):
        # eps = 1 sits on the boundary of |eps| <= 1
        assert drift_upper_bound(ProcessParams(2, 2), 2) == pytest.approx(2.0)

    @pytest.mark.parametrize("n", [100, 1000])
    def test_sandwich_all_u(self, n):
        for m in range(math.ceil(0.45 * n), math.floor(0.55 * n) + 1, max(1, n // 100)):
            p = ProcessParams(n, m)
            for u in range(2, m + 1):
                e = expected_unhappy_exact(p, u)
                lo1, lo2 = drift_lower_bounds(p, u)
                assert lo1 <= e + 1e-9 and lo2 <= e + 1e-9
                assert e <= drift_upper_bound(p, u) + 1e-9


class TestHittingBound:
    def test_values(self):
        p = ProcessParams(100, 50)
        assert hitting_tail_bound(p, 2, 200) == pytest.approx((1 + math.log(2) + 100) / 200)
        assert hitting_tail_bound(p, 2, 200) == pytest.approx(0.508466, abs=1e-6)
        assert hitting_tail_bound(p, 2, 1e6) == pytest.approx(1.01693e-4, rel=1e-5)
        assert hitting_tail_bound(p, 2, 1) == 1.0

    def test_floor(self):
        p = ProcessParams(100, 60)  # eps = 0.2, floor = 40
        with pytest.raises(ParameterError):
            hitting_tail_bound(p, 39, 10)
        hitting_tail_bound(p, 40, 10)


class TestGaltonWatson:
    def test_small_k_exact(self):
        xs = gw_survival_exact(0.0, 3).xs
        assert xs[0] == 1.0 and xs[1] == 0.5 and xs[2] == 0.375

    def test_recursion_matches_fraction_oracle(self):
        eps = Fraction(1, 10)
        x = Fraction(1)
        exact = [x]
        for _ in range(12):
            x = (1 + eps) * x * (1 - x / 2)
            exact.append(x)
        xs = gw_survival_exact(0.1, 12).xs
        assert np.allclose(xs, [float(v) for v in exact], rtol=1e-14, atol=0)

    def test_bounds_values(self):
        assert gw_survival_bounds(0.0, 2) == pytest.approx((1 / 3, 1 / 2))
        assert gw_survival_bounds(0.0, 1) == pytest.approx((1 / 2, 2 / 3))
        lo, hi = gw_survival_bounds(0.1, 10**6)
        assert lo == pytest.approx(0.1, rel=1e-12) and hi == pytest.approx(0.2, rel=1e-12)

    def test_large_k_bounds_sandwich_limit(self):
        lo, hi = gw_survival_bounds(0.1, 10**6)
        assert lo <= tree_survival_probability(0.1) <= hi

    @pytest.mark.parametrize("eps", GW_EPS)
    def test_sandwich(self, eps):
        curve = gw_survival_exact(eps, 10_000)
        tol = 1e-12
        assert (curve.lower <= curve.xs + tol).all()
        assert (curve.xs <= curve.upper + tol).all()

    @pytest.mark.parametrize("eps", GW_EPS)
    def test_monotone(self, eps):
        xs = gw_survival_exact(eps, 10_000).xs
        assert (np.diff(xs) <= 0).all()

    @pytest.mark.parametrize("eps", [0.01, 0.1, 0.3])
    def test_limit_is_positive_fixed_point(self, eps):
        x = gw_survival_at(eps, int(10**6 / eps))
        assert abs(x - tree_survival_probability(eps)) < 1e-9
        assert tree_survival_probability(eps) == pytest.approx(2 * eps / (1 + eps))

    def test_survival_probability_formula(self):
        assert gw_survival_probability(0.0) == 0.0
        assert gw_survival_probability(-0.5) == 0.0
        assert gw_survival_probability(0.1) == pytest.approx(0.0952380952, rel=1e-9)

    @pytest.mark.parametrize("k", [0, 1, 2, 10, 100, 10_000])
    def test_bounds_continuous_at_zero(self, k):
        zero = np.array(gw_survival_bounds(0.0, k))
        for e in (1e-12, -1e-12):
            assert np.abs(np.array(gw_survival_bounds(e, k)) - zero).max() < 1e-6

    def test_bounds_vectorised(self):
        lo, hi = gw_survival_bounds(0.05, np.arange(5))
        assert lo.shape == (5,) and lo[0] == 1.0 and hi[0] == 1.0

    def test_rejects(self):
        with pytest.raises(ParameterError):
            gw_survival_exact(1.0, 5)
        with pytest.raises(ParameterError):
            gw_survival_bounds(0.1, -1)


class TestRegimes:
    def test_classify(self):
        assert classify_regime(ProcessParams(10_000, 5000)) is Regime.CRITICAL
        assert classify_regime(ProcessParams(10_000, 4500)) is Regime.SUBCRITICAL
        assert classify_regime(ProcessParams(10_000, 5500)) is Regime.SUPERCRITICAL

    def test_predicted_scale(self):
        assert predicted_scale(ProcessParams(10_000, 5000)) == pytest.approx(100.0)
        assert predicted_scale(ProcessParams(10_000, 4500)) == pytest.approx(10 * math.log(100))
        assert predicted_scale(ProcessParams(10_000, 5500)) == pytest.approx(
            10 * math.exp(100 / 8192), rel=1e-12)
        assert predicted_scale(ProcessParams(10_000, 5500)) == pytest.approx(10.1228, abs=1e-4)

    @pytest.mark.parametrize("n", [10**3, 10**4, 10**5, 10**6])
    def test_scale_continuity(self, n):
        w = math.e / math.sqrt(n)
        m_sub = math.floor((1 - w) * n / 2) - 1
        m_sup = math.ceil((1 + w) * n / 2) + 1
        crit = math.sqrt(n)
        for m in (m_sub, m_sup):
            p = ProcessParams(n, m)
            assert classify_regime(p) is not Regime.CRITICAL
            ratio = predicted_scale(p) / crit
            assert 1 / 8 <= ratio <= 8


class TestTailThresholds:
    def test_subcritical_lower(self):
        up, lo = tail_thresholds(ProcessParams(10_000, 4500), 1)
        assert lo.side is Side.LOWER and up.side is Side.UPPER
        assert lo.threshold == pytest.approx(10 * math.log(100) / 4)
        assert lo.threshold == pytest.approx(11.5129, abs=1e-4)
        assert up.bound == 1.0
        assert up.log_threshold == pytest.approx(
            math.log(8) + 70 + math.log(10) + math.log(math.log(100)))

    def test_critical_lower(self):
        _, lo = tail_thresholds(ProcessParams(10_000, 5000), 1)
        assert lo.threshold == pytest.approx(50 / math.e)
        assert lo.threshold == pytest.approx(18.393972, abs=1e-6)

    def test_supercritical_large_a(self):
        up, lo = tail_thresholds(ProcessParams(10_000, 5500), 1e6)
        assert lo.k0 == pytest.approx(math.exp(100 / 8192))
        assert lo.bound == 0.0
        assert up.bound == 0.0
        # e^(2^10 * 100) overflows; the log survives
        assert math.isinf(up.threshold)
        assert up.log_threshold == pytest.approx(math.log(2e6) + math.log(10) + 1024 * 100)

    def test_supercritical_small_a(self):
        _, lo = tail_thresholds(ProcessParams(10_000, 5500), 1.0)
        assert lo.bound == 1.0  # 3/A clamps
        assert lo.threshold == pytest.approx(10 * math.exp(100 / 8192) / 2)

    def test_rejects_small_a(self):
        with pytest.raises(ParameterError):
            tail_thresholds(ProcessParams(100, 50), 0.5)


class TestTraversalBound:
    def test_values(self):
        assert traversal_bound(ProcessParams(10_000, 5500), 5) == pytest.approx(
            math.exp(-1000 / 20480))
        assert traversal_bound(ProcessParams(10_000, 5500), 5) == pytest.approx(0.952345, abs=1e-6)
        assert traversal_bound(ProcessParams(10_000, 5000), 1) == pytest.approx(
            math.exp(-math.e * 100 / 4096))
        assert traversal_bound(ProcessParams(10_000, 5000), 1) == pytest.approx(0.935790, abs=1e-6)

    def test_cap(self):
        with pytest.raises(ParameterError):
            traversal_bound(ProcessParams(10_000, 5500), 6)
        with pytest.raises(ParameterError):
            traversal_bound(ProcessParams(10_000, 5500), 0)
        traversal_bound(ProcessParams(10_000, 4500), 10**9)
