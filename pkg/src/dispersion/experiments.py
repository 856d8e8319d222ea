"""Monte Carlo campaigns and diagnostics for the dispersion time.

Trial i of a campaign always uses stream (seed, i), and results are stored
by trial index, so summaries do not depend on how trials were split across
worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import _kernels as K
from .analytics import (
    Regime,
    classify_regime,
    predicted_scale,
    tail_thresholds,
    traversal_bound,
)
from .coupling import DominanceReport, dominance_test
from .engine import (
    as_seed,
    TIMEOUT,
    ParameterError,
    ProcessParams,
    RngStream,
    Trajectory,
    default_max_steps,
    run_to_dispersion,
)

QUANTILE_LEVELS = (Fraction(5, 100), Fraction(25, 100), Fraction(1, 2),
                   Fraction(75, 100), Fraction(95, 100))


class DiagnosticFailure(AssertionError):
    """A diagnostic's built-in assertion did not hold."""


def clopper_pearson(k: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    alpha = 1.0 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


# ---------------------------------------------------------------------------
# campaigns


def _chunks(trials: int, threads: int) -> list[tuple[int, int]]:
    size = max(1, math.ceil(trials / max(1, threads * 4)))
    return [(lo, min(trials, lo + size)) for lo in range(0, trials, size)]


def simulate_times(
    params: ProcessParams,
    trials: int,
    seed: int = 0,
    max_steps: Optional[int] = None,
    threads: int = 1,
) -> np.ndarray:
    """Dispersion times of trials 0..trials-1 (-1 = timeout)."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    max_steps = _resolve_max_steps(params, max_steps)
    out = np.empty(trials, dtype=np.int64)

    def work(span):
        lo, hi = span
        K.dispersion_times(params.n, params.m, as_seed(seed), lo, max_steps, out[lo:hi])

    spans = _chunks(trials, threads)
    if threads <= 1:
        for span in spans:
            work(span)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, spans))
    return out


def merge_times(parts: Sequence[tuple[int, np.ndarray]], trials: int) -> np.ndarray:
    """Assemble (first_trial, times) blocks from any partition into one array."""
    out = np.full(trials, np.iinfo(np.int64).min, dtype=np.int64)
    for start, block in parts:
        out[start:start + len(block)] = block
    if (out == np.iinfo(np.int64).min).any():
        raise ParameterError("partition does not cover every trial")
    return out


def _resolve_max_steps(params: ProcessParams, max_steps: Optional[int]) -> int:
    if max_steps is None:
        if classify_regime(params) is Regime.SUPERCRITICAL:
            raise ParameterError("supercritical runs need an explicit max_steps")
        return default_max_steps(params)
    if max_steps < 0:
        raise ParameterError("max_steps must be non-negative")
    return int(max_steps)


@dataclass(frozen=True)
class TailEstimate:
    """P(T > theta) from the sample, with a Clopper-Pearson interval.

    ``censored`` is set when timeouts happened at or below theta, in which
    case the estimate counts them as exceeding theta (an upper estimate).
    """

    theta: float
    exceed: int
    trials: int
    estimate: float
    ci_low: float
    ci_high: float
    censored: bool


@dataclass
class McSummary:
    """Dispersion-time statistics of one campaign.

    Quantiles treat timeouts as +inf and are ``None`` (censored) unless the
    dispersed fraction exceeds the level.  ``mean`` and ``se`` are over the
    dispersed trials only.
    """

    params: ProcessParams
    trials: int
    max_steps: int
    quantiles: dict
    mean: float
    se: float
    timeout_count: int
    tails: list = field(default_factory=list)
    times: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def dispersed(self) -> int:
        return self.trials - self.timeout_count

    @property
    def median(self) -> Optional[int]:
        return self.quantiles[Fraction(1, 2)]


def summarize(
    params: ProcessParams,
    times: np.ndarray,
    max_steps: int,
    thetas: Sequence[float] = (),
    confidence: float = 0.99,
) -> McSummary:
    times = np.asarray(times, dtype=np.int64)
    trials = times.shape[0]
    done = np.sort(times[times >= 0])
    k = done.shape[0]
    quantiles = {}
    for q in QUANTILE_LEVELS:
        if k > q * trials:
            idx = math.ceil(q * trials) - 1
            quantiles[q] = int(done[max(idx, 0)])
        else:
            quantiles[q] = None
    if k:
        vals = done.astype(float).tolist()
        mean = math.fsum(vals) / k
        var = math.fsum((v - mean) ** 2 for v in vals) / (k - 1) if k > 1 else 0.0
        se = math.sqrt(var / k)
    else:
        mean = se = math.nan
    tails = []
    timeouts = trials - k
    for theta in thetas:
        exceed = int(np.count_nonzero(done > theta)) + timeouts
        lo, hi = clopper_pearson(exceed, trials, confidence)
        tails.append(TailEstimate(float(theta), exceed, trials, exceed / trials,
                                  lo, hi, bool(timeouts and theta >= max_steps)))
    return McSummary(params, trials, max_steps, quantiles, mean, se, timeouts, tails, times)


def run_campaign(
    params: ProcessParams,
    trials: int,
    seed: int = 0,
    max_steps: Optional[int] = None,
    record_trajectories: bool = False,
    threads: int = 1,
    thetas: Sequence[float] = (),
):
    """Run ``trials`` independent dispersions and summarise them.

    Returns the :class:`McSummary`, or ``(summary, trajectories)`` when
    ``record_trajectories`` is set.
    """
    max_steps = _resolve_max_steps(params, max_steps)
    if record_trajectories:
        trajs = []
        times = np.empty(trials, dtype=np.int64)
        for i in range(trials):
            T, traj = run_to_dispersion(params, RngStream(seed, i), max_steps, record=True)
            times[i] = -1 if T is TIMEOUT else T
            trajs.append(traj)
        return summarize(params, times, max_steps, thetas), trajs
    times = simulate_times(params, trials, seed, max_steps, threads)
    return summarize(params, times, max_steps, thetas)


# ---------------------------------------------------------------------------
# crossings


@dataclass
class CrossingAnnotation:
    """Strip crossings of one trajectory.

    tau_l[i]: first t after the previous up-crossing with U_t <= eps_hat n / 32;
    tau_u[i]: first t after tau_l[i] with U_t > eps_hat n / 8.
    """

    low: float
    high: float
    tau_l: list
    tau_u: list
    x_count: int
    a_event_holds: bool
    m_event_durations: list

    def interleaved(self) -> bool:
        merged = []
        for i, tl in enumerate(self.tau_l):
            merged.append(tl)
            if i < len(self.tau_u):
                merged.append(self.tau_u[i])
        return (
            len(self.tau_u) in (len(self.tau_l), len(self.tau_l) - 1)
            and all(a < b for a, b in zip(merged, merged[1:]))
        )


def crossing_thresholds(params: ProcessParams) -> tuple[float, float]:
    s = params.eps_hat * params.n
    return s / 32.0, s / 8.0


def annotate_crossings(traj: Trajectory, b: Optional[float] = None) -> CrossingAnnotation:
    """Scan a recorded series once for tau^L / tau^U, X and the event A(b).

    A(b) fails iff some t <= b has U_t > eps_hat n / 32 and
    U_{t+1} < U_t / 32.  ``b`` defaults to exp(eps_hat n / 2^19) capped at 10^7.
    """
    series = np.asarray(traj.series)
    if series.size == 0:
        raise ParameterError("empty trajectory")
    params = traj.params
    low, high = crossing_thresholds(params)
    if b is None:
        b = default_a_budget(params)
    tau_l, tau_u = [], []
    seeking_low = True
    for t in range(1, series.shape[0]):
        u = series[t]
        if seeking_low:
            if u <= low:
                tau_l.append(t)
                seeking_low = False
        elif u > high:
            tau_u.append(t)
            seeking_low = True
    big = params.eps_hat * params.n / 32.0
    now, nxt = series[:-1].astype(float), series[1:].astype(float)
    within = np.arange(now.shape[0]) <= b
    bad = within & (now > big) & (nxt < now / 32.0)
    durations = [u - l for l, u in zip(tau_l, tau_u)]
    return CrossingAnnotation(low, high, tau_l, tau_u, len(tau_u), not bool(bad.any()), durations)


def default_a_budget(params: ProcessParams) -> float:
    return min(1e7, math.exp(min(2.0 ** -19 * params.eps_hat * params.n, 700.0)))


# ---------------------------------------------------------------------------
# traversal diagnostics


@dataclass(frozen=True)
class TraversalRow:
    """Empirical P(first traversal shorter than j) next to its analytic bound.

    ``ok`` means empirical <= bound + (empirical - ci_low), i.e. the
    interval does not lie wholly above the bound.  ``vacuous`` marks rows
    with no included trajectories.
    """

    j: int
    included: int
    excluded: int
    hits: int
    empirical: float
    ci_low: float
    ci_high: float
    bound: float
    ok: bool
    vacuous: bool


def traversal_diagnostics(
    params: ProcessParams,
    trials: int,
    seed: int,
    j_list: Sequence[int],
    max_steps: Optional[int] = None,
    entry_u: Optional[int] = None,
    confidence: float = 0.99,
    check: bool = True,
) -> list[TraversalRow]:
    """Compare the empirical length of the first strip traversal with its bound.

    By default each trial runs from U_0 = m until its first tau^L (trials
    that disperse or time out before it are excluded).  With ``entry_u`` the
    clock starts at an entry state U = entry_u <= eps_hat n / 32 instead;
    by the Markov property this is the law after a tau^L with that value.
    """
    if not j_list:
        raise ParameterError("j_list is empty")
    bounds = {j: traversal_bound(params, j) for j in j_list}
    low, high = crossing_thresholds(params)
    horizon = max(j_list)
    dur = np.empty(trials, dtype=np.int64)
    if entry_u is None:
        if max_steps is None:
            max_steps = default_max_steps(params)
        tau_l = np.empty(trials, dtype=np.int64)
        K.first_traversal(params.n, params.m, as_seed(seed), 0, low, high, horizon, int(max_steps), tau_l, dur)
        included = tau_l >= 0
    else:
        if not 0 < entry_u <= low:
            raise ParameterError(f"entry_u must lie in 1..{low}")
        K.traversal_from(params.n, params.m, int(entry_u), as_seed(seed), 0, high, horizon, dur)
        included = np.ones(trials, dtype=bool)
    n_in = int(included.sum())
    rows = []
    for j in j_list:
        hits = int(np.count_nonzero(included & (dur >= 1) & (dur < j)))
        lo, hi = clopper_pearson(hits, n_in, confidence)
        emp = hits / n_in if n_in else math.nan
        rows.append(TraversalRow(j, n_in, trials - n_in, hits, emp, lo, hi,
                                 bounds[j], lo <= bounds[j], n_in == 0))
    if check and not all(r.ok for r in rows):
        raise DiagnosticFailure(f"traversal bound violated: {rows}")
    return rows


# ---------------------------------------------------------------------------
# tail-bound consistency and A(b)


@dataclass(frozen=True)
class TailCheck:
    """P(T > theta_upper) or P(T <= theta_lower) against the explicit bound."""

    side: str
    a: float
    threshold: float
    bound: float
    hits: int
    trials: int
    empirical: float
    ci_low: float
    ok: bool
    vacuous: bool


def tail_bound_checks(
    params: ProcessParams, times: np.ndarray, a_list: Sequence[float], confidence: float = 0.99
) -> list[TailCheck]:
    """Empirical tails of ``times`` (-1 = timeout) against the explicit thresholds.

    ``vacuous`` flags a bound clamped to 1.  A timeout counts towards
    T > theta_upper only when theta_upper is below the budget; otherwise the
    row is checked with it counted (conservative).
    """
    times = np.asarray(times)
    timeouts = times < 0
    trials = times.shape[0]
    out = []
    for a in a_list:
        upper, lower = tail_thresholds(params, a)
        hits = int(np.count_nonzero(timeouts | (times > upper.threshold)))
        lo, _ = clopper_pearson(hits, trials, confidence)
        out.append(TailCheck("upper", a, upper.threshold, upper.bound, hits, trials,
                             hits / trials, lo, lo <= upper.bound, upper.bound >= 1.0))
        if lower.k0 is None:
            low_hits = int(np.count_nonzero(~timeouts & (times <= lower.threshold)))
        else:
            low_hits = int(np.count_nonzero(~timeouts & (times < lower.threshold)))
        lo, _ = clopper_pearson(low_hits, trials, confidence)
        out.append(TailCheck("lower", a, lower.threshold, lower.bound, low_hits, trials,
                             low_hits / trials, lo, lo <= lower.bound, lower.bound >= 1.0))
    return out


def a_event_failure_rate(trajectories: Sequence[Trajectory], b: Optional[float] = None) -> float:
    fails = sum(not annotate_crossings(tr, b).a_event_holds for tr in trajectories)
    return fails / len(trajectories)


# ---------------------------------------------------------------------------
# sweeps and the monotonicity probe


@dataclass
class SweepResult:
    rows: list
    diagnostics: dict


def _fit_slope(x, y) -> Optional[float]:
    if len(x) < 2:
        return None
    return float(np.polyfit(np.asarray(x, float), np.asarray(y, float), 1)[0])


def scaling_sweep(
    grid: Sequence[ProcessParams],
    trials: int,
    seed: int = 0,
    max_steps: Optional[int] = None,
    threads: int = 1,
) -> SweepResult:
    """One campaign per grid cell plus per-regime scaling diagnostics.

    critical: slope of log(median) on log(n) and consecutive median ratios;
    subcritical: median |eps| / log(eps^2 n) per eps;
    supercritical: slope of log(median) on eps^2 n per eps.
    Censored medians are left out of the fits.
    """
    if not grid:
        raise ParameterError("empty grid")
    rows = [run_campaign(p, trials, seed, max_steps, threads=threads) for p in grid]
    crit = sorted((r for r in rows if classify_regime(r.params) is Regime.CRITICAL),
                  key=lambda r: r.params.n)
    crit_ok = [r for r in crit if r.median is not None]
    diag: dict = {
        "critical_slope": _fit_slope([math.log(r.params.n) for r in crit_ok],
                                     [math.log(r.median) for r in crit_ok]),
        "critical_ratios": [b.median / a.median for a, b in zip(crit_ok, crit_ok[1:])],
        "critical_censored": len(crit) - len(crit_ok),
    }
    sub: dict = {}
    sup: dict = {}
    for r in rows:
        p = r.params
        regime = classify_regime(p)
        if regime is Regime.SUBCRITICAL:
            ratio = None if r.median is None else r.median / predicted_scale(p)
            sub.setdefault(p.eps, []).append((p.n, ratio))
        elif regime is Regime.SUPERCRITICAL:
            sup.setdefault(p.eps, []).append((p.eps ** 2 * p.n, r.median))
    diag["subcritical_ratios"] = {e: sorted(v) for e, v in sub.items()}
    sup_fit = {}
    for e, cells in sup.items():
        cells.sort()
        done = [(x, med) for x, med in cells if med is not None]
        sup_fit[e] = {
            "cells": cells,
            "slope": _fit_slope([x for x, _ in done], [math.log(med) for _, med in done]),
            "censored": len(cells) - len(done),
        }
    diag["supercritical"] = sup_fit
    return SweepResult(rows, diag)


@dataclass(frozen=True)
class ConjectureProbe:
    """Empirical look at whether T(n, m2) dominates T(n, m1); not a proof."""

    n: int
    m1: int
    m2: int
    report: DominanceReport
    label: str = "EMPIRICAL PROBE"


def conjecture_probe(
    n: int,
    m1: int,
    m2: int,
    trials: int,
    seed: int = 0,
    max_steps: Optional[int] = None,
    delta: float = 1e-3,
    threads: int = 1,
) -> ConjectureProbe:
    """Sample T under m1 and m2 particles (same streams) and test dominance."""
    if not 2 <= m1 <= m2 <= n:
        raise ParameterError("need 2 <= m1 <= m2 <= n")
    p1, p2 = ProcessParams(n, m1), ProcessParams(n, m2)
    budget = max_steps if max_steps is not None else max(
        _resolve_default(p1), _resolve_default(p2))
    t1 = simulate_times(p1, trials, seed, budget, threads).astype(float)
    t2 = simulate_times(p2, trials, seed, budget, threads).astype(float)
    t1[t1 < 0] = np.inf
    t2[t2 < 0] = np.inf
    return ConjectureProbe(n, m1, m2, dominance_test(t1, t2, delta))


def _resolve_default(params: ProcessParams) -> int:
    return _resolve_max_steps(params, None)
