"""Exact simulation of the dispersion process on the complete graph with loops.

Two engines share one randomness contract:

* the naive engine tracks every particle's vertex and is the literal
  definition of the dynamics;
* the lumped engine tracks only the unhappy count U_t.  Given U_t = u the
  h = m - u happy particles sit alone on h distinct vertices, and by symmetry
  those vertices can be taken to be ids 0..h-1.  One step throws u balls
  into n bins and counts the bins that end up crowded.

All draws come from an :class:`RngStream`, a pure function of
``(seed, stream_id)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import _kernels as K

_MASK64 = (1 << 64) - 1


class _Sentinel:
    def __init__(self, name: str) -> None:
        self._name = name

    def __repr__(self) -> str:
        return self._name

    def __reduce__(self):
        return self._name


TIMEOUT = _Sentinel("TIMEOUT")
"""Returned in place of a dispersion time when ``max_steps`` ran out."""


class ParameterError(ValueError):
    """Invalid process or operation parameters."""


@dataclass(frozen=True)
class ProcessParams:
    """Vertex count ``n`` and particle count ``m``; everything else is derived.

    ``eps`` is the relative excess 2m/n - 1, stored as the correctly rounded
    float of the exact ratio (``eps_exact``).  ``eps_hat`` is
    max(|eps|, e / sqrt(n)).
    """

    n: int
    m: int

    def __post_init__(self) -> None:
        n, m = self.n, self.m
        if isinstance(n, bool) or isinstance(m, bool):
            raise ParameterError("n and m must be integers")
        if int(n) != n or int(m) != m:
            raise ParameterError(f"n and m must be integers, got n={n!r}, m={m!r}")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "m", int(m))
        if self.n < 2:
            raise ParameterError(f"need n >= 2, got n={self.n}")
        if self.m < 2:
            raise ParameterError(f"need m >= 2, got m={self.m}")
        if self.m > self.n:
            raise ParameterError(
                f"m={self.m} > n={self.n}: the process can never disperse"
            )

    @property
    def eps_exact(self) -> Fraction:
        return Fraction(2 * self.m - self.n, self.n)

    @property
    def eps(self) -> float:
        return float(self.eps_exact)

    @property
    def critical_width(self) -> float:
        """e * n**-1/2, the half-width of the critical window in eps."""
        return math.e / math.sqrt(self.n)

    @property
    def eps_hat(self) -> float:
        return max(abs(self.eps), self.critical_width)

    @classmethod
    def from_eps(cls, n: int, eps: float) -> "ProcessParams":
        """Round m = (1 + eps) n / 2 half-up."""
        return cls(n, math.floor((1.0 + eps) * n / 2.0 + 0.5))


def as_seed(seed: int) -> np.uint64:
    """Validate a 64-bit seed and convert it for the compiled kernels."""
    if not 0 <= seed <= _MASK64:
        raise ParameterError("seed must be an unsigned 64-bit integer")
    return np.uint64(seed)


class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    The key is the SplitMix64 finalizer applied to the seed mixed with the
    stream id; the stream itself is xoshiro256** seeded from the key.  A
    numpy ``Generator`` (PCG64, same key) is available for binomial draws.
    Streams are not thread-safe; use one per trial.
    """

    def __init__(self, seed: int = 0, stream_id: int = 0) -> None:
        as_seed(seed)
        if stream_id < 0:
            raise ParameterError("stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.state = np.empty(4, dtype=np.uint64)
        K.seed_state(as_seed(self.seed), self.stream_id, self.state)
        self._generator: Optional[np.random.Generator] = None
        self._scratch: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    @property
    def key(self) -> int:
        return stream_key(self.seed, self.stream_id)

    @property
    def generator(self) -> np.random.Generator:
        if self._generator is None:
            self._generator = np.random.Generator(np.random.PCG64(self.key))
        return self._generator

    def integers_below(self, n: int, size: int) -> np.ndarray:
        """``size`` uniform draws from {0, ..., n-1}."""
        out = np.empty(size, dtype=np.int64)
        K.fill_below(self.state, n, out)
        return out

    def scratch(self, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
        buf = self._scratch.get(n)
        if buf is None or buf[1].shape[0] < m:
            buf = (np.zeros(n, dtype=np.int64), np.empty(m, dtype=np.int64))
            self._scratch[n] = buf
        return buf


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, stream_id: int) -> int:
    golden = 0x9E3779B97F4A7C15
    return mix64(seed ^ mix64((stream_id * golden + golden) & _MASK64))


@dataclass
class DispersionState:
    """Process state at step ``t``; ``naive_positions`` only in the naive engine."""

    t: int
    u: int
    h: int
    naive_positions: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dispersed(self) -> bool:
        return self.u == 0


@dataclass
class Trajectory:
    """Recorded U series of one run; ``series[t] = U_t`` starting at U_0 = m."""

    params: ProcessParams
    series: np.ndarray
    dispersed_at: object

    def pairs(self):
        return list(enumerate(self.series.tolist()))


def init(params: ProcessParams, naive: bool = False) -> DispersionState:
    """All m particles unhappy on vertex 1 at time 0."""
    positions = np.ones(params.m, dtype=np.int64) if naive else None
    return DispersionState(t=0, u=params.m, h=0, naive_positions=positions)


def apply_moves(state: DispersionState, n: int, destinations) -> DispersionState:
    """Deterministic half of a naive step: unhappy particles, in index order,
    move to ``destinations`` (vertex ids 1..n)."""
    if state.naive_positions is None:
        raise ParameterError("apply_moves needs naive positions")
    if state.u == 0:
        raise ParameterError("state is already dispersed")
    dests = np.asarray(destinations, dtype=np.int64)
    if dests.shape != (state.u,):
        raise ParameterError(f"need {state.u} destinations, got {dests.shape}")
    if dests.size and (dests.min() < 1 or dests.max() > n):
        raise ParameterError(f"destinations must lie in 1..{n}")
    positions = state.naive_positions.copy()
    counts = np.zeros(n + 1, dtype=np.int64)
    u = int(K.naive_apply(positions, dests, counts))
    return DispersionState(state.t + 1, u, positions.shape[0] - u, positions)


def step_naive(state: DispersionState, rng: RngStream, n: int) -> DispersionState:
    """One step of the per-particle engine."""
    if state.naive_positions is None:
        raise ParameterError("step_naive needs naive positions")
    if state.u == 0:
        raise ParameterError("state is already dispersed")
    positions = state.naive_positions.copy()
    counts = np.zeros(n + 1, dtype=np.int64)
    u = int(K.naive_step(n, positions, rng.state, counts))
    return DispersionState(state.t + 1, u, positions.shape[0] - u, positions)


def _check_u(params: ProcessParams, u: int) -> None:
    if u <= 0:
        raise ParameterError("u = 0: the process has already dispersed")
    if u > params.m:
        raise ParameterError(f"u={u} exceeds m={params.m}")


def step_lumped(params: ProcessParams, u: int, rng: RngStream) -> int:
    """Draw U_{t+1} given U_t = u; O(u) expected work."""
    _check_u(params, u)
    counts, touched = rng.scratch(params.n, params.m)
    return int(K.lumped_step_once(params.n, params.m, int(u), rng.state, counts, touched))


def default_max_steps(params: ProcessParams) -> int:
    """10**4 * ceil(sqrt(n)); supercritical runs should set their own budget."""
    return 10_000 * (math.isqrt(params.n - 1) + 1)


def run_to_dispersion(
    params: ProcessParams,
    rng: RngStream,
    max_steps: Optional[int] = None,
    record: bool = False,
):
    """Iterate the lumped chain from U_0 = m.

    Returns ``(T, trajectory)`` where ``T`` is the dispersion time or
    :data:`TIMEOUT` and ``trajectory`` is ``None`` unless ``record``.
    """
    if max_steps is None:
        max_steps = default_max_steps(params)
    if max_steps < 0:
        raise ParameterError("max_steps must be non-negative")
    n, m = params.n, params.m
    counts, touched = rng.scratch(n, m)
    u = m
    t = 0
    chunks = [np.array([m], dtype=np.int64)]
    size = 256
    while u > 0 and t < max_steps:
        buf = np.empty(min(size, max_steps - t), dtype=np.int64)
        done = int(K.advance(n, m, u, rng.state, counts, touched, buf))
        t += done
        u = int(buf[done - 1])
        if record:
            chunks.append(buf[:done])
        size = min(size * 2, 1 << 20)
    T = t if u == 0 else TIMEOUT
    traj = None
    if record:
        traj = Trajectory(params, np.concatenate(chunks), T)
    return T, traj
