"""Sequence calculus for stretched-exponential tail bounds.

Convolution, renewal sums ``u = sum_j b^{*j}``, submultiplicative weights
``w_n ~ e^{gamma sqrt n} / n^2`` and the weighted norm ``||s|| = sum w_n s_n``
for which ``||s * t|| <= ||s|| ||t||``.  Sums are exactly rounded
(``math.fsum``) so convolution is commutative bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidParameter,
    LengthMismatch,
    NonzeroAtZero,
    NotDominated,
    TooFewPoints,
    VerificationFailed,
)


@dataclass(frozen=True)
class TailSequence:
    """Finite nonnegative sequence ``s_0 .. s_N``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or len(v) < 2:
            raise InvalidParameter("a tail sequence needs at least two entries")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise InvalidParameter("tail sequences are finite and nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return len(self.values) - 1

    def __len__(self):
        return len(self.values)

    def __getitem__(self, n):
        return self.values[n]

    def scaled(self, factor: float) -> "TailSequence":
        return TailSequence(self.values * factor)

    @classmethod
    def delta(cls, N: int, at: int = 0) -> "TailSequence":
        v = np.zeros(N + 1)
        v[at] = 1.0
        return cls(v)

    @classmethod
    def stretched(cls, N: int, C: float = 1.0, gamma: float = 1.0, zero_at_origin: bool = True):
        """``C e^{-gamma sqrt n}``, with ``s_0 = 0`` unless told otherwise."""
        n = np.arange(N + 1, dtype=np.float64)
        v = C * np.exp(-gamma * np.sqrt(n))
        if zero_at_origin:
            v[0] = 0.0
        return cls(v)


def _as_values(s) -> np.ndarray:
    return s.values if isinstance(s, TailSequence) else np.asarray(s, dtype=np.float64)


def convolve(s, t) -> TailSequence:
    """``(s*t)_n = sum_{k<=n} s_k t_{n-k}`` for n <= N."""
    sv, tv = _as_values(s), _as_values(t)
    if len(sv) != len(tv):
        raise LengthMismatch(f"truncations differ: {len(sv) - 1} vs {len(tv) - 1}")
    out = np.empty(len(sv))
    for n in range(len(sv)):
        out[n] = math.fsum(sv[: n + 1] * tv[n::-1])
    return TailSequence(out)


def renewal_sum(b) -> TailSequence:
    """``u = delta_0 + b * u``, i.e. the sum over all compositions of n of the products of b."""
    bv = _as_values(b)
    if bv[0] != 0.0:
        raise NonzeroAtZero(f"b_0 = {bv[0]!r}; inter-return times are positive")
    u = np.empty(len(bv))
    u[0] = 1.0
    for n in range(1, len(bv)):
        u[n] = math.fsum(bv[1: n + 1] * u[n - 1:: -1])
    return TailSequence(u)


@dataclass(frozen=True)
class WeightSequence:
    """``w_n = K e^{gamma sqrt n} / n^2`` (constant below ``n0``), with ``w_0 = 1``.

    ``K >= 1`` is the single factor that makes the sequence submultiplicative
    on ``1 <= n, p, n + p <= N``; ``raw_from`` is the index above which the
    uncorrected weights already are.
    """

    gamma: float
    values: np.ndarray
    K: float
    n0: int = 1
    raw_from: int = 1

    @property
    def N(self) -> int:
        return len(self.values) - 1


def _raw_log_weights(gamma: float, N: int, n0: int) -> np.ndarray:
    n = np.arange(N + 1, dtype=np.float64)
    lw = np.zeros(N + 1)
    lw[1:] = gamma * np.sqrt(n[1:]) - 2.0 * np.log(n[1:])
    if n0 > 1:
        lw[1:n0] = lw[n0]
    return lw


def _row_excess(lw: np.ndarray) -> np.ndarray:
    """``E[n] = max_{p >= n, n+p <= N} log(w_{n+p} / (w_n w_p))`` (``-inf`` where empty)."""
    N = len(lw) - 1
    out = np.full(N + 1, -math.inf)
    for n in range(1, N // 2 + 1):
        p = np.arange(n, N - n + 1)
        out[n] = float(np.max(lw[n + p] - lw[n] - lw[p]))
    return out


def make_weights(gamma: float, N: int, n0: int = 1) -> WeightSequence:
    if gamma <= 0:
        raise InvalidParameter("gamma must be positive")
    if N < 4:
        raise InvalidParameter("N must be >= 4")
    if not 1 <= n0 <= N:
        raise InvalidParameter("n0 must lie in [1, N]")
    lw = _raw_log_weights(gamma, N, n0)
    rows = _row_excess(lw)
    # a hair above the exact maximum so the linear-space check is strict
    Kf = max(1.0, math.exp(float(np.max(rows)))) * (1.0 + 1e-12)
    w = np.empty(N + 1)
    w[0] = 1.0
    w[1:] = Kf * np.exp(lw[1:])
    for n in range(1, N // 2 + 1):
        p = np.arange(n, N - n + 1)
        if np.any(w[n + p] > w[n] * w[p]):
            raise VerificationFailed(f"w_(n+p) > w_n w_p for n = {n}")
    suffix_max = np.maximum.accumulate(rows[::-1])[::-1]
    bad = np.nonzero(suffix_max[1:] > 0)[0]
    raw_from = int(bad[-1]) + 2 if len(bad) else 1
    w.setflags(write=False)
    return WeightSequence(float(gamma), w, Kf, int(n0), raw_from)


def analytic_raw_threshold(gamma: float) -> int:
    """Least m0 with ``gamma sqrt(m) / 2 >= 2 log m`` for every m >= m0.

    For ``min(n, p) >= m0`` the uncorrected weights satisfy
    ``w_{n+p} <= w_n w_p`` since ``sqrt n + sqrt p - sqrt(n+p) >= sqrt(min)/2``.
    """
    def g(m):
        return gamma * math.sqrt(m) / 2 - 2 * math.log(m)

    # g falls until m* = (8/gamma)^2 and rises after it
    m = max(1, int(math.ceil((8.0 / gamma) ** 2)))
    if min(g(max(1, m - 1)), g(m)) >= 0:
        return 1
    while g(m) < 0:
        m += 1
    return m


def weighted_norm(s, w: WeightSequence) -> float:
    """``sum_{n >= 1} w_n s_n``."""
    sv = _as_values(s)
    if len(sv) != len(w.values):
        raise LengthMismatch(f"sequence has N = {len(sv) - 1}, weights N = {w.N}")
    return math.fsum(sv[1:] * w.values[1:])


@dataclass
class LemmaCheck:
    D: float
    norm_a: float
    norm_b: float
    sup_wu: float
    bound: float
    ok: bool
    gamma: float
    weights: WeightSequence = field(repr=False)
    u: TailSequence = field(repr=False)
    identity_residual: float = 0.0

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "N": self.weights.N, "D": self.D, "K": self.weights.K,
                "norm_a": self.norm_a, "norm_b": self.norm_b, "sup_wu": self.sup_wu,
                "bound": self.bound, "identity_residual": self.identity_residual, "ok": self.ok}


def domination_constant(a, gamma: float) -> float:
    av = _as_values(a)
    n = np.arange(len(av), dtype=np.float64)
    return float(np.max(av * np.exp(gamma * np.sqrt(n))))


def renewal_residual(b, u) -> float:
    """Max relative deviation of ``u`` from ``delta_0 + b * u``."""
    uv = _as_values(u)
    rhs = convolve(b, u).values.copy()
    rhs[0] += 1.0
    scale = np.maximum(np.abs(uv), np.finfo(float).tiny)
    return float(np.max(np.abs(uv - rhs) / scale))


def check_stretched_lemma(a, gamma: float, margin: float = 0.05, *, slack: float = 1e-9,
                          n0: int = 1, weights: WeightSequence | None = None) -> LemmaCheck:
    """Rescale ``a`` by ``D = (1+margin) ||a||`` and verify ``sup w_n u_n <= 1 / (1 - ||b||)``.

    Domination ``a_n <= C e^{-gamma sqrt n}`` is a statement about the tail;
    on a finite range it is tested by requiring that ``a_n e^{gamma sqrt n}``
    over the upper half of the range never exceeds its maximum over the
    lower half.
    """
    av = _as_values(a)
    if len(av) < 5:
        raise InvalidParameter("need N >= 4")
    if av[0] != 0.0:
        raise NonzeroAtZero("a_0 must vanish")
    N = len(av) - 1
    n = np.arange(N + 1, dtype=np.float64)
    scaled = av * np.exp(gamma * np.sqrt(n))
    half = N // 2
    head = float(np.max(scaled[: half + 1]))
    tail = float(np.max(scaled[half:]))
    if tail > head * (1 + 1e-12):
        raise NotDominated(f"a_n e^(gamma sqrt n) keeps growing: {tail:.3g} > {head:.3g}")
    w = weights if weights is not None else make_weights(gamma, N, n0)
    norm_a = weighted_norm(av, w)
    D = max(1.0, (1.0 + margin) * norm_a)
    bv = av / D
    norm_b = weighted_norm(bv, w)
    u = renewal_sum(bv)
    sup_wu = float(np.max(w.values * u.values))
    bound = 1.0 / (1.0 - norm_b) if norm_b < 1 else math.inf
    ok = norm_b < 1.0 and sup_wu <= bound * (1.0 + slack)
    res = renewal_residual(bv, u)
    return LemmaCheck(D, norm_a, norm_b, sup_wu, bound, bool(ok), float(gamma), w, u, res)


@dataclass(frozen=True)
class BoundParams:
    delta: float
    D: float
    gamma: float

    def __post_init__(self):
        if self.delta <= 0 or self.gamma <= 0:
            raise InvalidParameter("delta and gamma must be positive")
        if self.D < 1.0:
            raise InvalidParameter("D must be >= 1")
        if not self.D ** self.delta * math.exp(-self.gamma) < 1.0:
            raise InvalidParameter("need D^delta e^-gamma < 1")

    @property
    def gamma_prime(self) -> float:
        return self.gamma - self.delta * math.log(self.D)

    @classmethod
    def choose(cls, D: float, gamma: float, fraction: float = 0.5) -> "BoundParams":
        """``delta = fraction * gamma / log D``, keeping ``D^delta e^-gamma < 1``."""
        if D <= 1.0:
            return cls(1.0, 1.0, gamma)
        return cls(fraction * gamma / math.log(D), D, gamma)


def _suffix_sums(v: np.ndarray) -> np.ndarray:
    out = np.empty(len(v) + 1)
    s = c = 0.0
    out[len(v)] = 0.0
    for i in range(len(v) - 1, -1, -1):
        x = float(v[i])
        t = s + x
        c += (s - t) + x if abs(s) >= abs(x) else (x - t) + s
        s = t
        out[i] = s + c
    return out


def theorem_tail_bounds(a, bp: BoundParams, lemma: LemmaCheck | None = None) -> np.ndarray:
    """``D^{delta sqrt n} sum_{p=n}^{N} u_p`` for every n = 0..N, with ``u`` the renewal sum of a/D."""
    if lemma is None:
        lemma = check_stretched_lemma(a, bp.gamma)
    if not lemma.ok:
        raise VerificationFailed("the stretched-exponential lemma check did not pass")
    uv = lemma.u.values if bp.D == lemma.D else renewal_sum(_as_values(a) / bp.D).values
    tails = _suffix_sums(uv)[:-1]
    n = np.arange(len(uv), dtype=np.float64)
    return np.exp(bp.delta * np.sqrt(n) * math.log(bp.D)) * tails


def theorem_tail_bound(a, bp: BoundParams, n: int, lemma: LemmaCheck | None = None) -> float:
    av = _as_values(a)
    if not 0 <= n < len(av):
        raise InvalidParameter(f"n must lie in [0, {len(av) - 1}]")
    if not np.any(av):
        return 1.0 if n == 0 else 0.0
    return float(theorem_tail_bounds(av, bp, lemma)[n])


@dataclass(frozen=True)
class StretchedFit:
    C: float
    gamma: float
    r2: float
    n_lo: int
    n_hi: int
    used: int
    dropped: int

    def predict(self, n) -> np.ndarray:
        return self.C * np.exp(-self.gamma * np.sqrt(np.asarray(n, dtype=np.float64)))

    def as_dict(self) -> dict:
        return {"C": self.C, "gamma": self.gamma, "r2": self.r2, "n_lo": self.n_lo,
                "n_hi": self.n_hi, "used": self.used, "dropped": self.dropped}


def fit_stretched_exponential(seq, n_lo: int, n_hi: int, *, index=None) -> StretchedFit:
    """Least-squares fit of ``log s_n = log C - gamma sqrt n`` over ``n_lo <= n <= n_hi``.

    ``index`` gives the n of every entry when ``seq`` is not indexed from 0.
    Nonpositive entries are dropped and counted.
    """
    v = _as_values(seq)
    idx = np.arange(len(v)) if index is None else np.asarray(index)
    sel = (idx >= n_lo) & (idx <= n_hi)
    vals, ns = v[sel], idx[sel].astype(np.float64)
    pos = vals > 0
    dropped = int(np.count_nonzero(~pos))
    vals, ns = vals[pos], ns[pos]
    if len(vals) < 8:
        raise TooFewPoints(f"only {len(vals)} positive entries in [{n_lo}, {n_hi}]")
    y = np.log(vals)
    X = np.column_stack([np.ones_like(ns), -np.sqrt(ns)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, len(y)) else 1.0 - ss_res / ss_tot
    return StretchedFit(float(math.exp(coef[0])), float(coef[1]), r2, int(n_lo), int(n_hi),
                        len(vals), dropped)
