"""Exact computations on the lumped chain for small n.

The one-step law of U_{t+1} given U_t = u is obtained by sequential
conditioning over bins: with r balls left and b bins left, the next bin
receives Binomial(r, 1/b) balls.  Marked bins (one happy occupant) are
processed first.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from . import _kernels as K
from .engine import ParameterError, ProcessParams

DEFAULT_N_CAP = 30


@dataclass
class KernelMatrix:
    """``p[u, v] = P(U_{t+1} = v | U_t = u)`` for u, v in 0..m."""

    n: int
    m: int
    p: np.ndarray

    def row(self, u: int) -> np.ndarray:
        return self.p[u]


def _binomial_table(n: int, m: int) -> np.ndarray:
    # table[b, r, c] = P(Bin(r, 1/b) = c)
    table = np.zeros((n + 1, m + 1, m + 1))
    for b in range(1, n + 1):
        q = 1.0 / b
        for r in range(m + 1):
            for c in range(r + 1):
                table[b, r, c] = comb(r, c) * q ** c * (1.0 - q) ** (r - c)
    return table


def exact_kernel(params: ProcessParams, n_cap: int = DEFAULT_N_CAP) -> KernelMatrix:
    """Full transition matrix of the lumped chain; O(n m^4) work, hence the cap."""
    n, m = params.n, params.m
    if n > n_cap:
        raise ParameterError(f"n={n} exceeds the exact-kernel cap {n_cap}")
    table = _binomial_table(n, m)
    p = np.zeros((m + 1, m + 1))
    p[0, 0] = 1.0
    for u in range(1, m + 1):
        p[u] = K.kernel_row(n, m, u, table)
    return KernelMatrix(n, m, p)


def exact_tail(params: ProcessParams, t_max: int, kernel: KernelMatrix | None = None) -> np.ndarray:
    """P(T > t) for t = 0..t_max, starting from the point mass at U = m."""
    if kernel is None:
        kernel = exact_kernel(params)
    dist = np.zeros(params.m + 1)
    dist[params.m] = 1.0
    tail = np.empty(t_max + 1)
    for t in range(t_max + 1):
        # summing the live mass avoids 1 - (mass at 0) cancellation
        tail[t] = dist[1:].sum()
        dist = dist @ kernel.p
    return tail


def exact_expected_time(params: ProcessParams, kernel: KernelMatrix | None = None) -> float:
    """E[T] from U_0 = m, solving (I - Q) x = 1 over the transient states 1..m."""
    if kernel is None:
        kernel = exact_kernel(params)
    q = kernel.p[1:, 1:]
    a = np.eye(q.shape[0]) - q
    try:
        x = np.linalg.solve(a, np.ones(q.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise ParameterError(f"absorption system is singular for {params}") from exc
    return float(x[-1])
