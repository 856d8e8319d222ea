"""Binomial process, {0,2}-offspring Galton-Watson sampling, the sequential
re-placement coupling, and an empirical stochastic-dominance check."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .engine import ParameterError, ProcessParams, RngStream, _Sentinel, as_seed

CAP_REACHED = _Sentinel("CAP_REACHED")
"""Returned by :func:`gw_generations_sample` when the tree is alive at the cap."""

# A tree with this many individuals at one level is treated as alive at the
# cap: extinction from there has probability (1 - x_r)**2**40 ~ 0.
_HUGE_POPULATION = 1 << 40


@dataclass(frozen=True)
class BinomialProcess:
    """Z_t with Z_{t+1} = 2 Bin(Z_t, (1 + eps)/2); absorbing at 0."""

    z: int
    eps: float
    t: int = 0

    def __post_init__(self) -> None:
        if not abs(self.eps) < 1:
            raise ParameterError(f"need |eps| < 1, got {self.eps}")
        if self.z < 0:
            raise ParameterError("z must be non-negative")


def binomial_step(proc: BinomialProcess, rng: RngStream) -> BinomialProcess:
    if proc.z == 0:
        return replace(proc, t=proc.t + 1)
    z = 2 * int(rng.generator.binomial(proc.z, (1.0 + proc.eps) / 2.0))
    return replace(proc, z=z, t=proc.t + 1)


def binomial_process_samples(
    z0, eps: float, t: int, size: int, rng: RngStream
) -> np.ndarray:
    """``size`` independent draws of Z_t(z0, eps), vectorised over one stream."""
    if not abs(eps) < 1:
        raise ParameterError(f"need |eps| < 1, got {eps}")
    z = np.broadcast_to(np.asarray(z0, dtype=np.int64), (size,)).copy()
    p = (1.0 + eps) / 2.0
    gen = rng.generator
    for _ in range(t):
        z = 2 * gen.binomial(z, p)
    return z


def gw_generations_sample(eps: float, rng: RngStream, cap: int):
    """Number of generations of one tree (0 if the root is childless), or CAP_REACHED."""
    out = gw_generations_batch(eps, 1, rng, cap)
    return CAP_REACHED if out[0] < 0 else int(out[0])


def gw_generations_batch(eps: float, size: int, rng: RngStream, cap: int) -> np.ndarray:
    """Vectorised level-count sampling; -1 marks trees alive at level ``cap``."""
    if not abs(eps) < 1:
        raise ParameterError(f"need |eps| < 1, got {eps}")
    if cap < 0:
        raise ParameterError("cap must be non-negative")
    p = (1.0 + eps) / 2.0
    gen = rng.generator
    z = np.ones(size, dtype=np.int64)
    gens = np.zeros(size, dtype=np.int64)
    alive = np.arange(size)
    for level in range(1, cap + 1):
        if alive.size == 0:
            break
        zz = 2 * gen.binomial(z[alive], p)
        z[alive] = zz
        live = zz > 0
        gens[alive[live]] = level
        huge = zz >= _HUGE_POPULATION
        if huge.any():
            gens[alive[huge]] = -1
            live &= ~huge
        alive = alive[live]
    gens[alive] = -1
    return gens


def replacement_one_step(params: ProcessParams, u: int, rng: RngStream) -> tuple[int, int]:
    """One step by sequential re-placement of the u unhappy particles.

    Returns ``(u_next, dominator)``: the realised U_{t+1} and twice the number
    of placements onto an already occupied vertex.  ``u_next <= dominator``
    holds on every path.
    """
    if u <= 0 or u > params.m:
        raise ParameterError(f"u={u} outside 1..{params.m}")
    counts, touched = rng.scratch(params.n, params.m)
    nu, ev = K.replacement_once(params.n, params.m, int(u), rng.state, counts, touched)
    return int(nu), 2 * int(ev)


def replacement_batch(
    params: ProcessParams, u: int, trials: int, seed: int = 0, stream0: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """``trials`` independent re-placement steps; stream i is ``stream0 + i``."""
    if u <= 0 or u > params.m:
        raise ParameterError(f"u={u} outside 1..{params.m}")
    out_u = np.empty(trials, dtype=np.int64)
    out_d = np.empty(trials, dtype=np.int64)
    K.replacement_batch(params.n, params.m, int(u), as_seed(seed), stream0, out_u, out_d)
    return out_u, out_d


# ---------------------------------------------------------------------------
# empirical dominance


class Verdict(enum.Enum):
    CONSISTENT = "Consistent"
    VIOLATED = "Violated"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class DominanceReport:
    """Worst ECDF crossing against the sum of the two DKW band radii."""

    max_violation: float
    dkw_radius: float
    verdict: Verdict
    n_lower: int
    n_upper: int


def dkw_radius(size: int, delta: float) -> float:
    """Half-width of the simultaneous DKW band at confidence 1 - delta."""
    return math.sqrt(math.log(2.0 / delta) / (2.0 * size))


def _ecdf(sorted_x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.searchsorted(sorted_x, grid, side="right") / sorted_x.shape[0]


def dominance_test(lower_samples, upper_samples, delta: float = 1e-3) -> DominanceReport:
    """Check ``lower <=_sd upper``, i.e. ECDF_upper(x) <= ECDF_lower(x) for all x.

    Timeouts may be passed as ``inf``.  The verdict is statistical:
    Violated iff the largest positive gap ECDF_upper - ECDF_lower exceeds
    the combined DKW radius.
    """
    lo = np.sort(np.asarray(lower_samples, dtype=float).ravel())
    up = np.sort(np.asarray(upper_samples, dtype=float).ravel())
    if lo.size == 0 or up.size == 0:
        raise ParameterError("dominance_test needs non-empty sample sets")
    if not 0 < delta < 1:
        raise ParameterError("delta must lie in (0, 1)")
    grid = np.union1d(lo, up)
    gap = _ecdf(up, grid) - _ecdf(lo, grid)
    worst = max(0.0, float(gap.max()))
    radius = dkw_radius(lo.size, delta) + dkw_radius(up.size, delta)
    verdict = Verdict.VIOLATED if worst > radius else Verdict.CONSISTENT
    return DominanceReport(worst, radius, verdict, lo.size, up.size)


# ---------------------------------------------------------------------------
# marginal coupling experiments


def lumped_samples_from(
    params: ProcessParams,
    u0: int,
    t: int,
    trials: int,
    seed: int = 0,
    stream0: int = 0,
    stop_at: int | None = None,
) -> np.ndarray:
    """U_t of the lumped chain started at U_0 = u0, optionally frozen once U >= stop_at."""
    if u0 < 0 or u0 > params.m:
        raise ParameterError(f"u0={u0} outside 0..{params.m}")
    out = np.empty(trials, dtype=np.int64)
    stop = params.m + 1 if stop_at is None else int(stop_at)
    K.lumped_endpoints(params.n, params.m, int(u0), as_seed(seed), stream0, int(t), stop, out)
    return out


def upper_coupling_check(
    params: ProcessParams, u0: int, t: int, trials: int, seed: int = 0, delta: float = 1e-3
) -> DominanceReport:
    """U_{t0+t} from U_{t0} = u0 against Z_t(u0, eps); expects Consistent."""
    u = lumped_samples_from(params, u0, t, trials, seed)
    z = binomial_process_samples(u0, params.eps, t, trials, RngStream(seed, trials))
    return dominance_test(u, z, delta)


def lower_coupling_check(
    params: ProcessParams,
    u0: int,
    t: int,
    trials: int,
    seed: int = 0,
    coupling_delta: float = 0.05,
    delta: float = 1e-3,
) -> DominanceReport:
    """Z_t(u0, eps - 4 delta') against U stopped once it exceeds delta' n; expects Consistent."""
    if not 0 < coupling_delta < (1.0 + params.eps) / 4.0:
        raise ParameterError("coupling delta must lie in (0, (1+eps)/4)")
    if u0 > coupling_delta * params.n:
        raise ParameterError("u0 must not exceed delta' n")
    # frozen at the first t with U_t > delta' n
    stop = math.floor(coupling_delta * params.n) + 1
    u = lumped_samples_from(params, u0, t, trials, seed, stop_at=stop)
    z = binomial_process_samples(
        u0, params.eps - 4.0 * coupling_delta, t, trials, RngStream(seed, trials)
    )
    return dominance_test(z, u, delta)
