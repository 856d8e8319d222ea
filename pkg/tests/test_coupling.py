import math

import numpy as np
import pytest

from dispersion.analytics import gw_survival_exact, tree_survival_probability
from dispersion.coupling import (
    CAP_REACHED,
    BinomialProcess,
    Verdict,
    binomial_process_samples,
    binomial_step,
    dkw_radius,
    dominance_test,
    gw_generations_batch,
    gw_generations_sample,
    lower_coupling_check,
    replacement_batch,
    replacement_one_step,
    upper_coupling_check,
)
from dispersion.engine import ParameterError, ProcessParams, RngStream


class TestBinomialProcess:
    def test_absorbing(self):
        proc = binomial_step(BinomialProcess(0, 0.3), RngStream())
        assert proc.z == 0 and proc.t == 1

    def test_even_after_step(self):
        rng = RngStream(1, 0)
        proc = BinomialProcess(7, 0.1)
        for _ in range(5):
            proc = binomial_step(proc, rng)
            assert proc.z % 2 == 0

    @pytest.mark.parametrize("eps,z", [(0.0, 10), (0.1, 1000)])
    def test_mean(self, eps, z):
        draws = binomial_process_samples(z, eps, 1, 100_000, RngStream(2, 0))
        p = (1 + eps) / 2
        se = 2 * math.sqrt(z * p * (1 - p) / draws.size)
        assert abs(draws.mean() - (1 + eps) * z) < 3 * se

    def test_rejects_eps(self):
        with pytest.raises(ParameterError):
            BinomialProcess(3, 1.0)
        with pytest.raises(ParameterError):
            binomial_process_samples(3, -1.0, 1, 10, RngStream())

    @pytest.mark.parametrize("big", [10, 100])
    @pytest.mark.parametrize("eps", [-0.1, 0.0, 0.1])
    @pytest.mark.parametrize("t", [1, 5, 20])
    def test_extinction_matches_trees(self, big, eps, t):
        trials = 100_000
        z = binomial_process_samples(big, eps, t, trials, RngStream(3, t))
        expect = (1 - gw_survival_exact(eps, t).xs[t]) ** big
        se = math.sqrt(expect * (1 - expect) / trials)
        assert abs((z == 0).mean() - expect) <= 3 * se


class TestGaltonWatsonSampling:
    def test_nearly_childless(self):
        gens = gw_generations_batch(-1 + 1e-9, 10_000, RngStream(), cap=50)
        assert (gens == 0).mean() > 0.999

    def test_two_levels_critical(self):
        gens = gw_generations_batch(0.0, 1_000_000, RngStream(4, 0), cap=50)
        # trees alive at the cap (-1) have at least two generations too
        assert abs(((gens >= 2) | (gens < 0)).mean() - 0.375) < 0.002

    def test_cap_reached_supercritical(self):
        gens = gw_generations_batch(0.1, 100_000, RngStream(5, 0), cap=10_000)
        frac = (gens < 0).mean()
        assert abs(frac - tree_survival_probability(0.1)) < 0.005

    def test_single_sample(self):
        out = gw_generations_sample(0.3, RngStream(6, 0), cap=0)
        assert out == 0 or out is CAP_REACHED
        assert gw_generations_sample(-1 + 1e-12, RngStream(), cap=10) == 0


class TestReplacement:
    def test_sparse_all_distinct(self):
        assert replacement_one_step(ProcessParams(10**6, 3), 3, RngStream()) == (0, 0)

    def test_two_on_two(self):
        p = ProcessParams(2, 2)
        seen = set()
        for i in range(200):
            seen.add(replacement_one_step(p, 2, RngStream(0, i)))
        assert seen == {(0, 0), (2, 2)}

    def test_batch_matches_single(self):
        p = ProcessParams(50, 30)
        un, dom = replacement_batch(p, 20, 10, seed=8)
        single = [replacement_one_step(p, 20, RngStream(8, i)) for i in range(10)]
        assert list(zip(un.tolist(), dom.tolist())) == single

    def test_pathwise_domination(self):
        p = ProcessParams(50, 30)
        for u in (2, 10, 30):
            un, dom = replacement_batch(p, u, 200_000, seed=u)
            assert (un <= dom).all()
            se = dom.std(ddof=1) / math.sqrt(dom.size)
            assert dom.mean() <= 2 * u * p.m / p.n + 4 * se

    def test_range(self):
        with pytest.raises(ParameterError):
            replacement_one_step(ProcessParams(10, 5), 0, RngStream())


class TestDominance:
    def test_identical(self):
        x = np.arange(100)
        rep = dominance_test(x, x)
        assert rep.verdict is Verdict.CONSISTENT and rep.max_violation == 0.0

    def test_strict_order(self):
        assert dominance_test([1, 1, 1], [5, 5, 5]).verdict is Verdict.CONSISTENT

    def test_reversed(self):
        gen = np.random.default_rng(0)
        lo = gen.binomial(10, 0.9, 100_000)
        hi = gen.binomial(10, 0.5, 100_000)
        assert dominance_test(lo, hi).verdict is Verdict.VIOLATED

    def test_radius(self):
        rep = dominance_test(np.zeros(100), np.zeros(400), delta=0.01)
        assert rep.dkw_radius == pytest.approx(dkw_radius(100, 0.01) + dkw_radius(400, 0.01))
        assert dkw_radius(100, 0.01) == pytest.approx(math.sqrt(math.log(200) / 200))

    def test_inf_allowed(self):
        rep = dominance_test([1.0, 2.0], [3.0, np.inf])
        assert rep.verdict is Verdict.CONSISTENT

    def test_empty(self):
        with pytest.raises(ParameterError):
            dominance_test([], [1])


class TestMarginalCouplings:
    @pytest.mark.parametrize("t", [1, 3, 10])
    def test_upper(self, t):
        rep = upper_coupling_check(ProcessParams(1000, 500), 100, t, 20_000, seed=t)
        assert rep.verdict is Verdict.CONSISTENT

    @pytest.mark.parametrize("t", [1, 3, 10])
    def test_lower(self, t):
        rep = lower_coupling_check(ProcessParams(1000, 500), 10, t, 20_000, seed=t)
        assert rep.verdict is Verdict.CONSISTENT

    def test_lower_rejects_delta(self):
        with pytest.raises(ParameterError):
            lower_coupling_check(ProcessParams(1000, 500), 10, 1, 10, coupling_delta=0.3)
