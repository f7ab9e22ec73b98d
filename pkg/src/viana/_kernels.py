"""Compiled inner loops.

The circle coordinate is carried as a 64-bit fixed-point word ``w`` with
``omega = w / 2**64``.  One step of the base map is ``w -> d*w + k (mod 2**64)``
which is the exact fractional part of ``d*omega`` in fixed point; the digit
``k < d`` refills the low bits that the multiplication shifts out.  It is a
hash of the old word, so the base orbit is a pure function of the state and
never collapses onto ``0`` the way ``d*omega mod 1`` does in binary floating
point.  The refill perturbs omega by less than ``d * 2**-64``.
"""

import math

import numba as nb
import numpy as np

TWO_PI = 2.0 * math.pi
_U1 = np.uint64(1)
_U11 = np.uint64(11)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 2.0 ** -53

NONE = -1
SENTINEL = -2


@nb.njit(cache=True, nogil=True)
def splitmix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _U30)) * _MIX1
    z = (z ^ (z >> _U27)) * _MIX2
    return z ^ (z >> _U31)


@nb.njit(cache=True, nogil=True)
def word_to_omega(w):
    return float(w >> _U11) * _INV53


@nb.njit(cache=True, nogil=True)
def advance(w, x, a0, eps, d):
    omega = float(w >> _U11) * _INV53
    x_new = a0 + eps * math.sin(TWO_PI * omega) - x * x
    ud = np.uint64(d)
    r = splitmix64(w)
    if ud & (ud - _U1) == 0:  # power of two: mask instead of dividing
        r &= ud - _U1
    else:
        r %= ud
    return w * ud + r, x_new


@nb.njit(cache=True, nogil=True)
def level_low(r, sqrt_eps):
    return sqrt_eps * math.exp(-float(r))


@nb.njit(cache=True, nogil=True)
def depth_of(x, sqrt_eps):
    """Partition depth |r| of ``x``; 0 outside the critical strip, -1 at x == 0."""
    ax = abs(x)
    if ax == 0.0:
        return -1
    if ax >= sqrt_eps:
        return 0
    r = int(math.ceil(math.log(sqrt_eps / ax)))
    if r < 1:
        r = 1
    while ax < sqrt_eps * math.exp(-float(r)):
        r += 1
    while r > 1 and ax >= sqrt_eps * math.exp(-float(r - 1)):
        r -= 1
    return r


@nb.njit(cache=True, nogil=True)
def run_orbit(w, x, n, a0, eps, d, sqrt_eps):
    words = np.empty(n + 1, dtype=np.uint64)
    xs = np.empty(n + 1)
    logd = np.empty(n)
    depths = np.empty(n + 1, dtype=np.int64)
    sentinels = 0
    for j in range(n + 1):
        words[j] = w
        xs[j] = x
        depths[j] = depth_of(x, sqrt_eps)
        if j < n:
            if x == 0.0:
                logd[j] = np.nan
                sentinels += 1
            else:
                logd[j] = math.log(2.0 * abs(x))
            w, x = advance(w, x, a0, eps, d)
    return words, xs, logd, depths, sentinels


@nb.njit(cache=True, nogil=True)
def count_escapes(words, xs, n, a0, eps, d, lo, hi):
    """Iterate every point ``n`` times in place; count points that ever leave [lo, hi]."""
    escapes = 0
    for i in range(words.shape[0]):
        w = words[i]
        x = xs[i]
        bad = False
        for _ in range(n):
            w, x = advance(w, x, a0, eps, d)
            if x < lo or x > hi:
                bad = True
        if bad:
            escapes += 1
        words[i] = w
        xs[i] = x
    return escapes


@nb.njit(cache=True, nogil=True)
def fiber_log_sums(words, xs, n, a0, eps, d):
    """Per-point sum of log|2 x_j| over j < n, skipping x_j == 0."""
    m = words.shape[0]
    sums = np.empty(m)
    skipped = np.zeros(m, dtype=np.int64)
    for i in range(m):
        w = words[i]
        x = xs[i]
        s = 0.0
        for _ in range(n):
            if x == 0.0:
                skipped[i] += 1
            else:
                s += math.log(2.0 * abs(x))
            w, x = advance(w, x, a0, eps, d)
        sums[i] = s
    return sums, skipped


@nb.njit(cache=True, nogil=True)
def first_return(w, x, n_max, p0, thr, num, den, a0, eps, d, sqrt_eps):
    """First hyperbolic return time in [p0, n_max] of one point.

    The deep-suffix condition ``sum_{i in G_n, k<=i<n} r_i <= (num/den)(n-k)``
    for all ``k < n`` is rewritten as ``den*P(n) - num*n <= min_k (den*P(k') - num*k)``
    with ``P`` the running deep prefix sum, all in exact integers.

    Returns ``(n, w_n, x_n)``; ``n`` is ``NONE`` when no return occurs by
    ``n_max`` and ``SENTINEL`` when the orbit hits ``x == 0``.
    """
    prefix = 0
    qmin = np.int64(9223372036854775807)
    for n in range(n_max + 1):
        r = depth_of(x, sqrt_eps)
        if r < 0:
            return SENTINEL, w, x
        score = den * prefix - num * n
        if n >= p0 and r >= 1 and score <= qmin:
            return n, w, x
        if score < qmin:
            qmin = score
        if n >= 1 and r >= thr:
            prefix += r
        if n < n_max:
            w, x = advance(w, x, a0, eps, d)
    return NONE, w, x


@nb.njit(cache=True, nogil=True)
def return_flags(depths, thr, num, den):
    """``flags[n]`` is True when n >= 1 is a hyperbolic return of the depth record.

    Same running-minimum recurrence as :func:`first_return`, without ``p0``.
    """
    m = depths.shape[0]
    out = np.zeros(m, dtype=np.bool_)
    prefix = 0
    qmin = np.int64(9223372036854775807)
    for n in range(m):
        r = depths[n]
        score = den * prefix - num * n
        out[n] = n >= 1 and r >= 1 and score <= qmin
        if score < qmin:
            qmin = score
        if n >= 1 and r >= thr:
            prefix += r
    return out


@nb.njit(cache=True, nogil=True)
def first_returns(words, xs, n_max, p0, thr, num, den, a0, eps, d, sqrt_eps):
    m = words.shape[0]
    out = np.empty(m, dtype=np.int64)
    for i in range(m):
        n, _, _ = first_return(words[i], xs[i], n_max, p0, thr, num, den, a0, eps, d, sqrt_eps)
        out[i] = n
    return out


@nb.njit(cache=True, nogil=True)
def advance_many(words, xs, n, a0, eps, d):
    for i in range(words.shape[0]):
        w = words[i]
        x = xs[i]
        for _ in range(n):
            w, x = advance(w, x, a0, eps, d)
        words[i] = w
        xs[i] = x


@nb.njit(cache=True, nogil=True)
def trajectory_block(words, xs, steps, a0, eps, d):
    """Record ``steps`` consecutive states of every point, then advance in place."""
    m = words.shape[0]
    om = np.empty((steps, m))
    xx = np.empty((steps, m))
    for i in range(m):
        w = words[i]
        x = xs[i]
        for t in range(steps):
            om[t, i] = float(w >> _U11) * _INV53
            xx[t, i] = x
            w, x = advance(w, x, a0, eps, d)
        words[i] = w
        xs[i] = x
    return om, xx


@nb.njit(cache=True, nogil=True)
def near_critical_scan(words, xs, n_steps, a0, eps, d, sqrt_eps):
    """Cumulative log|2x_j| (j < N) and first j >= 1 with |x_j| < sqrt_eps, per point."""
    m = words.shape[0]
    cum = np.empty((m, n_steps + 1))
    first_in = np.full(m, n_steps + 1, dtype=np.int64)
    for i in range(m):
        w = words[i]
        x = xs[i]
        s = 0.0
        cum[i, 0] = 0.0
        for j in range(n_steps):
            if j >= 1 and abs(x) < sqrt_eps and first_in[i] > n_steps:
                first_in[i] = j
            s += math.log(2.0 * abs(x))
            cum[i, j + 1] = s
            w, x = advance(w, x, a0, eps, d)
        if abs(x) < sqrt_eps and first_in[i] > n_steps:
            first_in[i] = n_steps
    return cum, first_in


@nb.njit(cache=True, nogil=True)
def segment_scan(words, xs, k_max, a0, eps, d, floor, terminal):
    """Orbit segments avoiding |x| < floor.

    For each start, walks forward while ``|x_j| >= floor`` and records, for
    every segment length k (1..k_max), the log product of |2 x_j| over j < k
    and whether the end point satisfies ``|x_k| <= terminal``.
    Returns flat arrays (k, log_product, is_terminal).
    """
    m = words.shape[0]
    ks = np.empty(m * k_max, dtype=np.int64)
    logs = np.empty(m * k_max)
    term = np.empty(m * k_max, dtype=np.bool_)
    c = 0
    for i in range(m):
        w = words[i]
        x = xs[i]
        s = 0.0
        for k in range(1, k_max + 1):
            if abs(x) < floor:
                break
            s += math.log(2.0 * abs(x))
            w, x = advance(w, x, a0, eps, d)
            ks[c] = k
            logs[c] = s
            term[c] = abs(x) <= terminal
            c += 1
    return ks[:c], logs[:c], term[:c]


@nb.njit(cache=True, nogil=True)
def eval_chain(value, slope, anchor, chain, thetas, a0, eps, d):
    """Value at each ``theta`` of an affine seed pushed through the branches in ``chain``."""
    n = chain.shape[0]
    out = np.empty(thetas.shape[0])
    th = np.empty(n + 1)
    for i in range(thetas.shape[0]):
        th[n] = thetas[i]
        for j in range(n - 1, -1, -1):
            th[j] = (th[j + 1] + chain[j]) / d
        x = value + slope * (th[0] - anchor)
        for j in range(n):
            x = a0 + eps * math.sin(TWO_PI * th[j]) - x * x
        out[i] = x
    return out


@nb.njit(cache=True, nogil=True)
def return_process(words, xs, n_max, p0, thr, num, den, a0, eps, d, sqrt_eps,
                   rect_lo, rect_hi, off, edges, times, codes, width):
    """Stopping-time sampler; see ``tower.simulate_return_process``.

    Returns ``(stops, counts, R, resolved, sentinel)``.
    """
    m = words.shape[0]
    stops = np.zeros((m, width), dtype=np.int32)
    counts = np.zeros(m, dtype=np.int64)
    R = np.full(m, -1, dtype=np.int64)
    resolved = np.zeros(m, dtype=np.bool_)
    sentinel = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        w = words[i]
        x = xs[i]
        t = 0
        c = 0
        while n_max - t >= p0:
            n, w, x = first_return(w, x, n_max - t, p0, thr, num, den, a0, eps, d, sqrt_eps)
            if n < 0:
                sentinel[i] = n == SENTINEL
                break
            t += n
            s = depth_of(x, sqrt_eps)
            q = (0 if x > 0 else 4) + min(max(s, 1), 4) - 1
            u = (x - rect_lo[q]) / (rect_hi[q] - rect_lo[q])
            a = off[q]
            b = off[q + 1]
            j = np.searchsorted(edges[a:b], u, side="right")
            if j > b - a - 1:
                j = b - a - 1
            tt = times[a + j]
            for _ in range(tt):
                w, x = advance(w, x, a0, eps, d)
            t += tt
            if c < width:
                stops[i, c] = t
            c += 1
            if codes[a + j] == 0:
                resolved[i] = True
                R[i] = t
                break
        counts[i] = min(c, width)
    return stops, counts, R, resolved, sentinel
