"""Compiled inner loops: stream derivation, xoshiro256**, and the step kernels.

Everything here operates on plain integers and numpy arrays so it can be
called from worker threads with the GIL released.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U32 = np.uint64(0xFFFFFFFF)


@njit(cache=True, inline="always")
def mix64(z):
    z = np.uint64(z)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True)
def seed_state(seed, stream_id, state):
    """Fill ``state`` (uint64[4]) from (seed, stream_id)."""
    key = mix64(np.uint64(seed) ^ mix64(np.uint64(stream_id) * _GOLDEN + _GOLDEN))
    x = key
    for i in range(4):
        x = x + _GOLDEN
        state[i] = mix64(x)
    # xoshiro must not start from the all-zero state
    if state[0] == 0 and state[1] == 0 and state[2] == 0 and state[3] == 0:
        state[0] = _GOLDEN


@njit(cache=True, inline="always")
def next_u64(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def next_below(s, n):
    """Uniform integer in [0, n) for 1 <= n < 2**32 (Lemire, 32-bit)."""
    bound = np.uint64(n)
    r = next_u64(s) >> np.uint64(32)
    prod = r * bound
    low = prod & _U32
    if low < bound:
        thresh = (np.uint64(1) << np.uint64(32)) % bound
        while low < thresh:
            r = next_u64(s) >> np.uint64(32)
            prod = r * bound
            low = prod & _U32
    return np.int64(prod >> np.uint64(32))


@njit(cache=True, inline="always")
def next_double(s):
    return np.float64(next_u64(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True)
def fill_below(s, n, out):
    for i in range(out.shape[0]):
        out[i] = next_below(s, n)


# ---------------------------------------------------------------------------
# lumped engine


@njit(cache=True, inline="always")
def lumped_step(n, m, u, s, counts, touched):
    # vertices 0..h-1 hold the happy particles; only touched bins are visited
    h = m - u
    k = 0
    for _ in range(u):
        v = next_below(s, n)
        if counts[v] == 0:
            touched[k] = v
            k += 1
        counts[v] += 1
    new_u = 0
    for i in range(k):
        v = touched[i]
        c = counts[v]
        counts[v] = 0
        if v < h:
            new_u += c + 1
        elif c >= 2:
            new_u += c
    return new_u


@njit(cache=True, nogil=True)
def lumped_step_once(n, m, u, s, counts, touched):
    return lumped_step(n, m, u, s, counts, touched)


@njit(cache=True, nogil=True)
def advance(n, m, u, s, counts, touched, out):
    """Run up to ``len(out)`` steps from ``u``, writing each new U; return steps taken."""
    i = 0
    while i < out.shape[0] and u > 0:
        u = lumped_step(n, m, u, s, counts, touched)
        out[i] = u
        i += 1
    return i


@njit(cache=True, nogil=True)
def dispersion_times(n, m, seed, stream0, max_steps, out):
    """out[i] = dispersion time of stream ``stream0 + i``, or -1 on timeout."""
    s = np.empty(4, dtype=np.uint64)
    counts = np.zeros(n, dtype=np.int64)
    touched = np.empty(m, dtype=np.int64)
    for i in range(out.shape[0]):
        seed_state(seed, stream0 + i, s)
        u = m
        t = 0
        while u > 0 and t < max_steps:
            u = lumped_step(n, m, u, s, counts, touched)
            t += 1
        out[i] = t if u == 0 else -1


@njit(cache=True, nogil=True)
def lumped_endpoints(n, m, u0, seed, stream0, steps, stop_at, out):
    """U after ``steps`` steps from ``u0``, frozen once U >= stop_at."""
    s = np.empty(4, dtype=np.uint64)
    counts = np.zeros(n, dtype=np.int64)
    touched = np.empty(m, dtype=np.int64)
    for i in range(out.shape[0]):
        seed_state(seed, stream0 + i, s)
        u = u0
        for _ in range(steps):
            if u == 0 or u >= stop_at:
                break
            u = lumped_step(n, m, u, s, counts, touched)
        out[i] = u


# ---------------------------------------------------------------------------
# naive engine (positions are vertex ids 1..n)


@njit(cache=True, inline="always")
def _occupancy(positions, counts):
    for p in positions:
        counts[p] += 1


@njit(cache=True, nogil=True)
def naive_apply(positions, dests, counts):
    """Move the unhappy particles (index order) to ``dests``; return new U.

    ``counts`` must be zero on entry (length n + 1) and is zero on exit.
    """
    _occupancy(positions, counts)
    k = 0
    for i in range(positions.shape[0]):
        if counts[positions[i]] >= 2:
            k += 1
    movers = np.empty(k, dtype=np.int64)
    k = 0
    for i in range(positions.shape[0]):
        if counts[positions[i]] >= 2:
            movers[k] = i
            k += 1
    for p in positions:
        counts[p] = 0
    for j in range(k):
        positions[movers[j]] = dests[j]
    _occupancy(positions, counts)
    u = 0
    for p in positions:
        if counts[p] >= 2:
            u += 1
    for p in positions:
        counts[p] = 0
    return u


@njit(cache=True, nogil=True)
def naive_step(n, positions, s, counts):
    _occupancy(positions, counts)
    u = 0
    for p in positions:
        if counts[p] >= 2:
            u += 1
    for p in positions:
        counts[p] = 0
    dests = np.empty(u, dtype=np.int64)
    for j in range(u):
        dests[j] = next_below(s, n) + 1
    return naive_apply(positions, dests, counts)


@njit(cache=True, nogil=True)
def naive_endpoints(n, m, seed, stream0, steps, out):
    """U after ``steps`` naive steps from the all-on-vertex-1 start."""
    s = np.empty(4, dtype=np.uint64)
    counts = np.zeros(n + 1, dtype=np.int64)
    positions = np.empty(m, dtype=np.int64)
    for i in range(out.shape[0]):
        seed_state(seed, stream0 + i, s)
        positions[:] = 1
        u = m
        for _ in range(steps):
            if u == 0:
                break
            u = naive_step(n, positions, s, counts)
        out[i] = u


# ---------------------------------------------------------------------------
# re-placement coupling


@njit(cache=True, inline="always")
def replacement_step(n, m, u, s, counts, touched):
    """Sequential re-placement of ``u`` movers; returns (u_next, #E events).

    Vertices 0..h-1 hold the happy particles.  An E event is a placement
    onto a vertex already holding a happy or temporarily happy particle,
    i.e. any non-empty vertex.
    """
    h = m - u
    k = 0
    events = 0
    for _ in range(u):
        v = next_below(s, n)
        occupied = counts[v] > 0 or v < h
        if occupied:
            events += 1
        if counts[v] == 0:
            touched[k] = v
            k += 1
        counts[v] += 1
    new_u = 0
    for i in range(k):
        v = touched[i]
        c = counts[v]
        counts[v] = 0
        if v < h:
            new_u += c + 1
        elif c >= 2:
            new_u += c
    return new_u, events


@njit(cache=True, nogil=True)
def replacement_once(n, m, u, s, counts, touched):
    return replacement_step(n, m, u, s, counts, touched)


@njit(cache=True, nogil=True)
def replacement_batch(n, m, u, seed, stream0, out_u, out_dom):
    s = np.empty(4, dtype=np.uint64)
    counts = np.zeros(n, dtype=np.int64)
    touched = np.empty(m, dtype=np.int64)
    for i in range(out_u.shape[0]):
        seed_state(seed, stream0 + i, s)
        nu, ev = replacement_step(n, m, u, s, counts, touched)
        out_u[i] = nu
        out_dom[i] = 2 * ev


# ---------------------------------------------------------------------------
# crossing scans


@njit(cache=True, nogil=True)
def first_traversal(n, m, seed, stream0, low, high, horizon, max_steps, out_tau_l, out_dur):
    """Per stream: first tau^L (U <= low, t >= 1) and the traversal length.

    out_tau_l[i] = -1 if the run dispersed or hit ``max_steps`` before tau^L.
    out_dur[i] = tau^U - tau^L if tau^U occurs within ``horizon`` steps of
    tau^L, else -1 (still below ``high`` at the horizon, or dispersed).
    """
    s = np.empty(4, dtype=np.uint64)
    counts = np.zeros(n, dtype=np.int64)
    touched = np.empty(m, dtype=np.int64)
    for i in range(out_tau_l.shape[0]):
        seed_state(seed, stream0 + i, s)
        u = m
        t = 0
        tau_l = -1
        while u > 0 and t < max_steps:
            u = lumped_step(n, m, u, s, counts, touched)
            t += 1
            if u <= low:
                tau_l = t
                break
        out_tau_l[i] = tau_l
        out_dur[i] = -1
        if tau_l < 0:
            continue
        for d in range(1, horizon + 1):
            if u == 0:
                break
            u = lumped_step(n, m, u, s, counts, touched)
            if u > high:
                out_dur[i] = d
                break


# ---------------------------------------------------------------------------
# exact one-step kernel


@njit(cache=True)
def kernel_row(n, m, u, binom):
    """Exact law of U' given U = u, by sequential conditioning over bins.

    ``binom[b, r, c]`` = P(Binomial(r, 1/b) = c).  Marked bins come first.
    Accumulation is Kahan-compensated.
    """
    h = m - u
    dist = np.zeros((u + 1, m + 1))
    dist[u, 0] = 1.0
    for j in range(n):
        b = n - j
        marked = j < h
        new = np.zeros((u + 1, m + 1))
        ncomp = np.zeros((u + 1, m + 1))
        for r in range(u + 1):
            for a in range(m + 1):
                p = dist[r, a]
                if p == 0.0:
                    continue
                for c in range(r + 1):
                    w = binom[b, r, c]
                    if w == 0.0:
                        continue
                    if marked:
                        add = c + 1 if c >= 1 else 0
                    else:
                        add = c if c >= 2 else 0
                    # Kahan add of p*w into new[r-c, a+add]
                    y = p * w - ncomp[r - c, a + add]
                    tot = new[r - c, a + add] + y
                    ncomp[r - c, a + add] = (tot - new[r - c, a + add]) - y
                    new[r - c, a + add] = tot
        dist = new
    row = np.zeros(m + 1)
    for a in range(m + 1):
        row[a] = dist[0, a]
    return row


@njit(cache=True, nogil=True)
def traversal_from(n, m, u0, seed, stream0, high, horizon, out_dur):
    """Traversal clock started at an entry state U = u0 (tau^L taken as 0)."""
    s = np.empty(4, dtype=np.uint64)
    counts = np.zeros(n, dtype=np.int64)
    touched = np.empty(m, dtype=np.int64)
    for i in range(out_dur.shape[0]):
        seed_state(seed, stream0 + i, s)
        u = u0
        out_dur[i] = -1
        for d in range(1, horizon + 1):
            if u == 0:
                break
            u = lumped_step(n, m, u, s, counts, touched)
            if u > high:
                out_dur[i] = d
                break
