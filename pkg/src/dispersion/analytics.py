"""Closed-form expectations, drift bounds, branching recursions and tail thresholds.

All functions are pure.  Probability-valued outputs are clamped to [0, 1];
step-count thresholds are returned unclamped (and may overflow to ``inf``,
in which case ``log_threshold`` still carries the finite value).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import ParameterError, ProcessParams

SUPERCRITICAL_SCALE_CONSTANT = 2.0 ** -13


def _clamp01(x: float) -> float:
    if math.isnan(x):
        return x
    return min(1.0, max(0.0, x))


def _pow_keep(n: int, u) -> float:
    """(1 - 1/n)**u evaluated as exp(u * log1p(-1/n))."""
    return np.exp(u * math.log1p(-1.0 / n))


# ---------------------------------------------------------------------------
# one-step expectation and drift


def _check_range(params: ProcessParams, u: int) -> None:
    if u < 0 or u > params.m:
        raise ParameterError(f"u={u} outside 0..{params.m}")


def expected_unhappy_exact(params: ProcessParams, u: int) -> float:
    """E[U_{t+1} | U_t = u], exactly.

    An unhappy particle becomes happy iff it lands on one of the n - h
    vertices without a happy occupant and none of the other u - 1 movers
    follows it; a happy particle is reactivated iff at least one mover lands
    on its vertex.
    """
    _check_range(params, u)
    if u == 0:
        return 0.0
    n, h = params.n, params.m - u
    stay = (n - h) / n * _pow_keep(n, u - 1)
    woken = -math.expm1(u * math.log1p(-1.0 / n))
    return float(u * (1.0 - stay) + h * woken)


def drift_lower_bounds(params: ProcessParams, u: int) -> tuple[float, float]:
    """((1+eps) u - 7u^2/(2n), (1+eps) u / 3), both lower bounds on E[U_{t+1}]."""
    _check_range(params, u)
    g = (1.0 + params.eps) * u
    return g - 7.0 * u * u / (2.0 * params.n), g / 3.0


def drift_upper_bound(params: ProcessParams, u: int) -> float:
    """u (1+eps) - u^2/n, an upper bound on E[U_{t+1}] for |eps| <= 1."""
    _check_range(params, u)
    if abs(params.eps_exact) > 1:
        raise ParameterError("the upper drift bound needs |eps| <= 1")
    return u * (1.0 + params.eps) - u * u / params.n


def hitting_tail_bound(params: ProcessParams, h: int, b: float) -> float:
    """Markov bound on P(tau - t0 > b) for tau the first time U_t <= h."""
    floor = max(math.ceil(2 * params.eps_exact * params.n), 2)
    if h < floor:
        raise ParameterError(f"h={h} below the admissible floor {floor}")
    if b <= 0:
        raise ParameterError("b must be positive")
    return _clamp01((1.0 + math.log(h) + 2.0 * params.n / h) / b)


# ---------------------------------------------------------------------------
# branching process


@dataclass
class SurvivalCurve:
    """x_k = P(a {0,2}-offspring Galton-Watson tree reaches level k).

    ``lower`` and ``upper`` hold the closed-form bounds at the same k; at
    k = 0 all three equal 1.
    """

    eps: float
    xs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def k_max(self) -> int:
        return self.xs.shape[0] - 1


def _check_eps(eps: float) -> None:
    if not abs(eps) < 1:
        raise ParameterError(f"need |eps| < 1, got {eps}")


_TINY = np.finfo(float).tiny


def _survival_step(eps: float, x: float) -> float:
    nxt = min(1.0, max(0.0, (1.0 + eps) * x * (1.0 - x / 2.0)))
    # subnormals round back up to themselves (0.7 * 5e-324 == 5e-324), which
    # would stall the decay; flush them to the true limit 0
    return 0.0 if nxt < _TINY else nxt


def gw_survival_exact(eps: float, k_max: int) -> SurvivalCurve:
    """Run the survival recursion x_k = (1+eps) x_{k-1} (1 - x_{k-1}/2) from x_0 = 1."""
    _check_eps(eps)
    if k_max < 0:
        raise ParameterError("k_max must be non-negative")
    xs = np.empty(k_max + 1)
    x = 1.0
    xs[0] = x
    for k in range(1, k_max + 1):
        nxt = _survival_step(eps, x)
        if nxt == x:
            xs[k:] = x
            break
        x = nxt
        xs[k] = x
    ks = np.arange(k_max + 1)
    lower, upper = gw_survival_bounds(eps, ks)
    return SurvivalCurve(eps, xs, np.atleast_1d(lower), np.atleast_1d(upper))


def gw_survival_at(eps: float, k: int) -> float:
    """x_k alone, without storing the curve; stops early at a floating fixed point."""
    _check_eps(eps)
    x = 1.0
    prev2 = None
    for _ in range(k):
        nxt = _survival_step(eps, x)
        if nxt == x or nxt == prev2:
            # fixed point or a 2-cycle in the last ulp
            return nxt
        prev2, x = x, nxt
    return x


def _one_minus_pow_over_eps(eps: float, k):
    """(1 - (1+eps)**-k) / eps, stable for small |eps| and vectorised over k."""
    k = np.asarray(k, dtype=float)
    ell = math.log1p(eps)
    if np.all(np.abs(eps * k) < 1e-8):
        # second-order series: k (ell/eps) (1 - k ell / 2)
        return k * (1.0 - eps / 2.0) * (1.0 - k * ell / 2.0)
    return -np.expm1(-k * ell) / eps


def gw_survival_bounds(eps: float, k):
    """(lower, upper) bounds on x_k; ``k`` may be an int or an array.

    upper = 2 eps / (1 - (1-2eps)(1+eps)^-k),
    lower = eps / (1 - (1-eps)(1+eps)^-k);
    at eps = 0 these become 2/(k+2) and 1/(k+1).
    """
    _check_eps(eps)
    scalar = np.ndim(k) == 0
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ParameterError("k must be non-negative")
    if eps == 0.0:
        lower = 1.0 / (k + 1.0)
        upper = 2.0 / (k + 2.0)
    elif eps > 0:
        g = np.exp(-k * math.log1p(eps))
        # 1 - (1 - c eps) g = eps * ((1 - g)/eps + c g)
        q = _one_minus_pow_over_eps(eps, k)
        lower = 1.0 / (q + g)
        upper = 2.0 / (q + 2.0 * g)
    else:
        # multiply through by r = (1+eps)^k so nothing overflows as r -> 0:
        # bound = c eps r / (r - 1 + c eps), same-sign terms in the denominator
        ell = math.log1p(eps)
        r = np.exp(k * ell)
        if np.all(np.abs(eps * k) < 1e-8):
            rm1 = k * ell * (1.0 + k * ell / 2.0)
        else:
            rm1 = np.expm1(k * ell)
        lower = eps * r / (rm1 + eps)
        upper = 2.0 * eps * r / (rm1 + 2.0 * eps)
    lower = np.clip(lower, 0.0, 1.0)
    upper = np.clip(upper, 0.0, 1.0)
    # match the recursion, which flushes subnormals to 0
    lower = np.where(lower < _TINY, 0.0, lower)
    upper = np.where(upper < _TINY, 0.0, upper)
    if scalar:
        return float(lower), float(upper)
    return lower, upper


def gw_survival_probability(eps: float) -> float:
    """Survival probability of the {0,2} tree: eps/(1 + eps/2) for eps > 0, else 0."""
    _check_eps(eps)
    if eps <= 0:
        return 0.0
    return eps / (1.0 + eps / 2.0)


def tree_survival_probability(eps: float) -> float:
    """lim x_k, the positive fixed point 2 eps / (1 + eps) of the recursion (0 if eps <= 0)."""
    _check_eps(eps)
    if eps <= 0:
        return 0.0
    return 2.0 * eps / (1.0 + eps)


# ---------------------------------------------------------------------------
# regimes, scales and explicit tail thresholds


class Regime(enum.Enum):
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"

    def __str__(self) -> str:
        return self.value


def classify_regime(params: ProcessParams) -> Regime:
    """Three-way split of eps at +-e/sqrt(n)."""
    w = params.critical_width
    if params.eps < -w:
        return Regime.SUBCRITICAL
    if params.eps > w:
        return Regime.SUPERCRITICAL
    return Regime.CRITICAL


def predicted_scale(
    params: ProcessParams, c: float = SUPERCRITICAL_SCALE_CONSTANT
) -> float:
    """Order of magnitude of T: |eps|^-1 log(eps^2 n), sqrt(n), or eps^-1 exp(c eps^2 n)."""
    regime = classify_regime(params)
    eps, n = params.eps, params.n
    if regime is Regime.SUBCRITICAL:
        return math.log(eps * eps * n) / abs(eps)
    if regime is Regime.CRITICAL:
        return math.sqrt(n)
    return math.exp(c * eps * eps * n) / eps


class Side(enum.Enum):
    UPPER = "upper"
    LOWER = "lower"


@dataclass(frozen=True)
class TailThreshold:
    """An explicit tail statement.

    Upper side: P(T > threshold) <= bound.  Lower side: P(T <= threshold)
    <= bound (strict ``<`` in the supercritical case, where ``k0`` is set).
    """

    side: Side
    a: float
    threshold: float
    log_threshold: float
    bound: float
    k0: Optional[float] = None


def tail_thresholds(params: ProcessParams, a: float) -> tuple[TailThreshold, TailThreshold]:
    """Upper- and lower-tail thresholds with their probability bounds for amplification ``a``."""
    if not a >= 1:
        raise ParameterError(f"need A >= 1, got {a}")
    n, eps, e_hat = params.n, params.eps, params.eps_hat
    w = params.critical_width
    s = e_hat * e_hat * n
    log_s = math.log(s)

    upper_bound = _clamp01(math.exp(-(a - 1.0)))
    if eps < -w:
        log_thr = math.log(8.0 * a) + 70.0 - math.log(e_hat) + math.log(log_s)
    else:
        log_thr = math.log(2.0 * a) - math.log(e_hat) + 2.0 ** 10 * s
    upper = TailThreshold(Side.UPPER, a, _safe_exp(log_thr), log_thr, upper_bound)

    if eps <= w:
        thr = log_s / (4.0 * a * e_hat)
        lower = TailThreshold(
            Side.LOWER, a, thr, math.log(thr), _clamp01(3.0 * math.exp(-a / 2.0 ** 11))
        )
    else:
        log_k0 = 2.0 ** -13 * s
        k0 = math.exp(log_k0)
        log_thr = log_k0 - math.log(e_hat) - math.log(2.0 * a)
        if a > k0:
            bound = 3.0 * math.exp(-a * s / (k0 * 2.0 ** 12))
        else:
            bound = 3.0 / a
        lower = TailThreshold(
            Side.LOWER, a, _safe_exp(log_thr), log_thr, _clamp01(bound), k0
        )
    return upper, lower


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def traversal_bound(params: ProcessParams, j: int) -> float:
    """exp(-eps_hat n / (2^12 j)): upper bound on P(first traversal shorter than j).

    For eps > 0 the statement needs j <= 1/(2 eps); checked in exact arithmetic.
    """
    if j < 1:
        raise ParameterError("j must be >= 1")
    eps = params.eps_exact
    if eps > 0 and 2 * j * eps > 1:
        raise ParameterError(f"j={j} exceeds 1/(2 eps) = {float(1 / (2 * eps))}")
    return math.exp(-params.eps_hat * params.n / (2.0 ** 12 * j))
