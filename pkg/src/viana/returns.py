"""Hyperbolic returns, their tail, and numerical checks of the expansion lemmas.

A time n is a hyperbolic return of an orbit when it sits in the critical
strip (``r_n >= 1``) and every suffix of its recent deep visits is light:
``sum_{i in G_n, k <= i < n} r_i <= c' (n - k)`` for all ``k < n``, where
``G_n`` collects the indices ``1 <= i < n`` with ``r_i >= (1/2 - 2 eta) log(1/eps)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels as K
from ._shards import map_shards
from .core import MapParams, Point, random_points
from .errors import InsufficientSegments, InvalidParameter
from .tails import TailSequence


@dataclass(frozen=True)
class ReturnConfig:
    eta: float
    c: float
    c_prime: float
    p0: int
    depth_threshold: float

    def __post_init__(self):
        if not 0 < self.eta < 1 / 3:
            raise InvalidParameter(f"eta must lie in (0, 1/3), got {self.eta}")
        if not 0 < self.c < self.c_prime:
            raise InvalidParameter(f"need 0 < c < c', got c={self.c}, c'={self.c_prime}")
        if self.p0 < 1:
            raise InvalidParameter("p0 must be >= 1")
        if not self.depth_threshold > 0:
            raise InvalidParameter("depth threshold must be positive")
        frac = Fraction(self.c_prime).limit_denominator(10 ** 6)
        if abs(float(frac) - self.c_prime) > 1e-9 * max(1.0, self.c_prime):
            raise InvalidParameter(f"c' = {self.c_prime} has no rational form with denominator <= 1e6")

    @classmethod
    def for_eps(cls, eps: float, eta: float = 0.1, c: float = 0.10, c_prime: float = 0.11,
                p0: int = 50) -> "ReturnConfig":
        if not 0 < eps < 1:
            raise InvalidParameter("eps must lie in (0, 1)")
        return cls(eta, c, c_prime, int(p0), (0.5 - 2 * eta) * math.log(1 / eps))

    @property
    def min_deep(self) -> int:
        """Smallest integer depth counted as deep (the threshold is non-strict)."""
        return int(math.ceil(self.depth_threshold))

    @property
    def c_prime_ratio(self) -> Fraction:
        """``c'`` as the exact rational all return tests compare against."""
        return Fraction(self.c_prime).limit_denominator(10 ** 6)

    def as_dict(self) -> dict:
        return {"eta": self.eta, "c": self.c, "c_prime": self.c_prime, "p0": self.p0,
                "depth_threshold": self.depth_threshold}


def deep_indices(depths, n: int, cfg: ReturnConfig) -> set[int]:
    r = np.asarray(depths)
    if len(r) < n:
        raise InvalidParameter("depth record shorter than n")
    return {i for i in range(1, n) if r[i] >= cfg.depth_threshold}


def is_hyperbolic_return(depths, n: int, cfg: ReturnConfig) -> bool:
    """Suffix-sum test, O(n)."""
    r = np.asarray(depths)
    if n < 1 or len(r) <= n:
        raise InvalidParameter("need 1 <= n < len(depths)")
    if r[n] < 1:
        return False
    frac = cfg.c_prime_ratio
    num, den = frac.numerator, frac.denominator
    suffix = 0
    for k in range(n - 1, -1, -1):
        if k >= 1 and r[k] >= cfg.depth_threshold:
            suffix += int(r[k])
        if den * suffix > num * (n - k):
            return False
    return True


def return_flags(depths, cfg: ReturnConfig) -> np.ndarray:
    """Boolean mask over ``n`` of :func:`is_hyperbolic_return`, in one compiled O(n) pass."""
    r = np.ascontiguousarray(depths, dtype=np.int64)
    frac = cfg.c_prime_ratio
    return K.return_flags(r, cfg.min_deep, frac.numerator, frac.denominator)


def _kernel_args(params: MapParams, cfg: ReturnConfig):
    frac = cfg.c_prime_ratio
    return (cfg.p0, cfg.min_deep, frac.numerator, frac.denominator,
            params.a0, params.eps, params.d, params.sqrt_eps)


def first_hyperbolic_return(params: MapParams, p: Point, cfg: ReturnConfig, n_max: int) -> int | None:
    """Least n in ``[p0, n_max]`` that is a hyperbolic return of ``p``.

    None when there is none, or when the orbit lands exactly on ``x = 0``.
    """
    if n_max < cfg.p0:
        raise InvalidParameter("n_max must be >= p0")
    p0, thr, num, den, *rest = _kernel_args(params, cfg)
    n, _, _ = K.first_return(np.uint64(p.word), p.x, int(n_max), p0, thr, num, den, *rest)
    return int(n) if n >= 0 else None


def first_hyperbolic_returns(params: MapParams, words, xs, cfg: ReturnConfig, n_max: int) -> np.ndarray:
    """Vector version; -1 marks no return, -2 an orbit through ``x = 0``."""
    p0, thr, num, den, *rest = _kernel_args(params, cfg)
    return K.first_returns(np.asarray(words, dtype=np.uint64), np.asarray(xs, dtype=np.float64),
                           int(n_max), p0, thr, num, den, *rest)


@dataclass
class HyperbolicTail:
    """``fraction[j]`` is the share of sampled points with no hyperbolic return in ``[p0, n[j])``."""

    n: np.ndarray
    survivors: np.ndarray
    fraction: np.ndarray
    samples: int
    sentinels: int
    meta: dict = field(default_factory=dict)

    @property
    def sequence(self) -> TailSequence:
        v = np.ones(int(self.n[-1]) + 1)
        v[self.n] = self.fraction
        return TailSequence(v)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "survivors", "fraction", "sqrt_n", "log_fraction"])
        for n, s, f in zip(self.n, self.survivors, self.fraction):
            w.writerow([int(n), int(s), repr(float(f)), repr(math.sqrt(n)),
                        repr(math.log(f)) if f > 0 else "-inf"])
        return buf.getvalue()


def hyperbolic_tail(params: MapParams, cfg: ReturnConfig, n_max: int, samples: int, seed: int = 0,
                    shards: int = 1, workers: int = 1) -> HyperbolicTail:
    """Monte Carlo estimate of ``Leb{no hyperbolic return in [p0, n)}`` for ``n = p0..n_max``."""
    if samples < 1000:
        raise InvalidParameter("hyperbolic_tail needs at least 1000 samples")
    if n_max < cfg.p0:
        raise InvalidParameter("n_max must be >= p0")

    def work(rng, size, _):
        words, xs = random_points(params, rng, size)
        return first_hyperbolic_returns(params, words, xs, cfg, n_max)

    firsts = np.concatenate(map_shards(work, seed, samples, shards, workers))
    sentinels = int(np.count_nonzero(firsts == K.SENTINEL))
    valid = firsts[firsts != K.SENTINEL]
    ns = np.arange(cfg.p0, n_max + 1)
    returned = np.sort(valid[valid >= 0])
    survivors = len(valid) - np.searchsorted(returned, ns, side="left")
    fraction = survivors / len(valid)
    meta = {"params": params.as_dict(), "config": cfg.as_dict(), "n_max": n_max,
            "samples": samples, "seed": seed, "shards": shards, "sentinels": sentinels}
    return HyperbolicTail(ns, survivors.astype(np.int64), fraction, samples, sentinels, meta)


@dataclass
class Calibration:
    """Outcome of :func:`calibrate_c`; ``c`` is None when no grid value reaches the target."""

    c: float | None
    c_prime: float | None
    share: float | None
    table: list[tuple[float, float]]

    def config(self, params: MapParams, eta: float = 0.1, p0: int = 50) -> ReturnConfig:
        """The calibrated config, or the defaults when calibration found nothing."""
        if self.c is None:
            return ReturnConfig.for_eps(params.eps, eta, p0=p0)
        return ReturnConfig.for_eps(params.eps, eta, self.c, self.c_prime, p0)


def calibrate_c(params: MapParams, eta: float = 0.1, grid=None, p0: int = 50, n: int = 100,
                samples: int = 10_000, seed: int = 0, ratio: float = 1.1,
                target: float = 0.5) -> Calibration:
    """Smallest c on ``grid`` for which at least ``target`` of the samples return by ``n``.

    ``c' = ratio * c``.  The share for every grid value scanned is kept in
    ``table``.
    """
    grid = np.round(np.arange(0.02, 0.3001, 0.01), 4) if grid is None else grid
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    words, xs = random_points(params, rng, samples)
    table = []
    for c in grid:
        cfg = ReturnConfig.for_eps(params.eps, eta, float(c), round(float(c) * ratio, 6), min(p0, n))
        firsts = first_hyperbolic_returns(params, words, xs, cfg, n)
        share = float(np.mean(firsts >= 0))
        table.append((float(c), share))
        if share >= target:
            return Calibration(float(c), cfg.c_prime, share, table)
    return Calibration(None, None, None, table)


# -- expansion lemmas -------------------------------------------------------

@dataclass
class ExpansionReport:
    """Measured constants of the two expansion lemmas.

    ``sigma2_hat`` is the growth rate of the worst-case product over the
    terminal-conditioned family (slope of ``min log prod`` against k), and
    ``C2_terminal`` the largest constant with ``prod >= C2 sigma2_hat^k`` on
    that family.  ``sigma2_pointwise`` is the cruder ``min prod^(1/k)``,
    which equals the envelope rate only when the constant is at least 1.
    """

    N_eps: int
    min_ratio_near: float
    stay_out_ok: bool
    stay_out_share: float
    sigma2_hat: float
    C2_hat: float
    C2_terminal: float
    sigma2_pointwise: float
    terminal_segments: int
    free_segments: int
    near_samples: int

    @property
    def success(self) -> bool:
        return self.stay_out_ok and self.min_ratio_near >= 1.0 and self.sigma2_hat > 1.0

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["success"] = self.success
        return d


def _envelope_rate(ks: np.ndarray, logs: np.ndarray, min_count: int = 5) -> float:
    """Least-squares slope of ``min log prod`` over segments of each length k."""
    kk, mins = [], []
    for k in np.unique(ks):
        sel = logs[ks == k]
        if len(sel) >= min_count:
            kk.append(k)
            mins.append(sel.min())
    if len(kk) < 2:
        raise InsufficientSegments("too few segment lengths for an envelope fit")
    return float(np.polyfit(np.asarray(kk, float), np.asarray(mins), 1)[0])


def verify_expansion_lemmas(params: MapParams, cfg: ReturnConfig, samples: int = 10_000,
                            seed: int = 0, *, n_near: int = 200, k_max: int = 60,
                            shards: int = 1, workers: int = 1) -> ExpansionReport:
    """Measure the binding time N(eps) and the constants sigma_2, C_2.

    Near the critical point (``|x| < 3 sqrt eps``): the least N for which every
    sample has ``prod_{j<N} |2 x_j| >= |x| eps^(eta-1)`` and stays out of
    ``|x_j| < sqrt eps`` for j = 1..N.  If no N achieves both, ``N_eps`` is the
    least N satisfying the product bound, ``stay_out_ok`` is False and
    ``stay_out_share`` gives the fraction of samples that do stay out.

    Away from it: orbit segments with ``|x_j| >= e^-9 sqrt eps`` for j < k,
    with and without the terminal condition ``|x_k| <= 2 sqrt eps``.
    ``C2_hat`` is the least ``prod / (sqrt(eps) sigma2_hat^k)`` over all of them.

    Raises
    ------
    InsufficientSegments
        Fewer than 100 terminal-conditioned segments were found.
    """
    if samples < 1000:
        raise InvalidParameter("verify_expansion_lemmas needs at least 1000 samples")
    se = params.sqrt_eps
    log_target = (cfg.eta - 1.0) * math.log(params.eps)

    def near(rng, size, _):
        words, xs = random_points(params, rng, size, (-3 * se, 3 * se))
        xs[xs == 0.0] = se * 1e-3
        cum, first_in = K.near_critical_scan(words, xs, n_near, params.a0, params.eps, params.d, se)
        return cum - np.log(np.abs(xs))[:, None] - log_target, first_in

    parts = map_shards(near, seed, samples, shards, workers)
    log_ratio = np.concatenate([p[0] for p in parts])
    first_in = np.concatenate([p[1] for p in parts])
    Ns = np.arange(n_near + 1)
    claim1 = np.all(log_ratio >= 0.0, axis=0) & (Ns >= 1)
    stay = np.array([np.all(first_in > N) for N in Ns])
    both = np.nonzero(claim1 & stay)[0]
    if len(both):
        N_eps, ok = int(both[0]), True
    elif claim1.any():
        N_eps, ok = int(np.nonzero(claim1)[0][0]), False
    else:
        N_eps, ok = n_near, False
    min_ratio = float(np.exp(np.min(log_ratio[:, N_eps])))
    share = float(np.mean(first_in > N_eps))

    floor = math.exp(-9) * se

    def away(rng, size, _):
        words, xs = random_points(params, rng, size)
        return K.segment_scan(words, xs, k_max, params.a0, params.eps, params.d, floor, 2 * se)

    segs = map_shards(away, seed + 1, samples, shards, workers)
    ks = np.concatenate([s[0] for s in segs])
    logs = np.concatenate([s[1] for s in segs])
    term = np.concatenate([s[2] for s in segs])
    n_term = int(np.count_nonzero(term))
    if n_term < 100:
        raise InsufficientSegments(f"only {n_term} terminal segments")
    log_sigma = _envelope_rate(ks[term], logs[term])
    c2_term = float(np.min(logs[term] - ks[term] * log_sigma))
    c2 = float(np.min(logs - 0.5 * math.log(params.eps) - ks * log_sigma))
    pointwise = float(np.min(logs[term] / ks[term]))
    return ExpansionReport(N_eps, min_ratio, ok, share, math.exp(log_sigma), math.exp(c2),
                           math.exp(c2_term), math.exp(pointwise), n_term, len(ks), samples)
