"""The skew product ``(omega, x) -> (d*omega mod 1, a0 + eps*sin(2*pi*omega) - x**2)``.

Parameters, forward-invariant fiber interval, orbits with their log fiber
derivatives and partition depths, Misiurewicz parameters of the quadratic
family and Lyapunov exponents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .errors import (
    DegenerateOrbit,
    InvalidParameter,
    NoSignChange,
    NotInvariant,
    NotRepelling,
    OutOfRange,
)

EPS_MAX = 0.05
_TWO64 = 1 << 64


@dataclass(frozen=True)
class MapParams:
    a0: float
    eps: float
    d: int
    fiber_interval: tuple[float, float]

    @property
    def sqrt_eps(self) -> float:
        return math.sqrt(self.eps)

    @property
    def lo(self) -> float:
        return self.fiber_interval[0]

    @property
    def hi(self) -> float:
        return self.fiber_interval[1]

    def as_dict(self) -> dict:
        return {"a0": self.a0, "eps": self.eps, "d": self.d,
                "fiber_lo": self.lo, "fiber_hi": self.hi}


def omega_to_word(omega: float) -> int:
    if not 0.0 <= omega < 1.0:
        raise InvalidParameter(f"omega must lie in [0, 1), got {omega!r}")
    return int(math.ldexp(omega, 64)) % _TWO64


def word_to_omega(word: int) -> float:
    return (word >> 11) * 2.0 ** -53


@dataclass(frozen=True)
class Point:
    """A point of ``S^1 x I``.

    ``word`` is the exact 64-bit state of the circle coordinate; ``omega``
    is its double-precision view.  Build from ``omega`` alone and the word
    is derived exactly.
    """

    omega: float
    x: float
    word: int | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.word is None:
            object.__setattr__(self, "word", omega_to_word(float(self.omega)))
        else:
            object.__setattr__(self, "word", int(self.word) % _TWO64)
            object.__setattr__(self, "omega", word_to_omega(self.word))
        object.__setattr__(self, "x", float(self.x))


@dataclass
class OrbitRecord:
    """Trajectory ``(omega_j, x_j)``, j = 0..n, with per-step diagnostics.

    ``log_derivs[j] = log|-2 x_j|`` for j < n (NaN where ``x_j == 0``);
    ``depths[j]`` is the partition depth r_j (-1 marks ``x_j == 0``).
    """

    words: np.ndarray
    omegas: np.ndarray
    xs: np.ndarray
    log_derivs: np.ndarray
    depths: np.ndarray
    sentinel_steps: int

    @property
    def n(self) -> int:
        return len(self.xs) - 1

    @property
    def has_sentinel(self) -> bool:
        return self.sentinel_steps > 0

    @property
    def points(self) -> list[Point]:
        return [Point(0.0, x, word=int(w)) for w, x in zip(self.words, self.xs)]

    @property
    def end(self) -> Point:
        return Point(0.0, self.xs[-1], word=int(self.words[-1]))


# -- quadratic family -------------------------------------------------------

def critical_value_orbit(a: float, n: int) -> list[float]:
    """``v_0 = a`` (the critical value) and ``v_j = h_a^j(v_0)``, j < n."""
    v = [a]
    for _ in range(n - 1):
        v.append(a - v[-1] * v[-1])
    return v


def misiurewicz_residual(a: float, m: int, k: int) -> float:
    """``h_a^{m+k}(v) - h_a^m(v)`` with ``v = h_a(0) = a``, the critical value."""
    v = critical_value_orbit(a, m + k + 1)
    return v[m + k] - v[m]


def cycle_multiplier(a: float, m: int, k: int) -> float:
    v = critical_value_orbit(a, m + k + 1)
    return math.prod(abs(-2.0 * v[j]) for j in range(m, m + k))


def find_misiurewicz(m: int = 2, k: int = 1, bracket=(1.4, 1.7), tol: float = 1e-12) -> float:
    """Parameter ``a`` whose critical value lands on a repelling k-cycle after m steps.

    The preperiod counts iterates of the critical value ``v = a`` (so m=2,
    k=1 asks that ``h_a^2(v)`` be a fixed point).  Brent's method is run to
    machine resolution.

    Raises
    ------
    NoSignChange
        The residual has the same sign at both ends of ``bracket``.
    OutOfRange
        The root is not strictly inside (1, 2).
    NotRepelling
        The cycle multiplier is at most 1.
    """
    if m < 1 or k < 1:
        raise InvalidParameter("preperiod and period must be >= 1")
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise NoSignChange(f"empty bracket {bracket!r}")
    flo = misiurewicz_residual(lo, m, k)
    fhi = misiurewicz_residual(hi, m, k)
    if flo == 0.0:
        root = lo
    elif fhi == 0.0:
        root = hi
    elif (flo > 0) == (fhi > 0):
        raise NoSignChange(f"residual has one sign on [{lo}, {hi}]: {flo:.3g}, {fhi:.3g}")
    else:
        root = brentq(misiurewicz_residual, lo, hi, args=(m, k), xtol=1e-15,
                      rtol=4 * np.finfo(float).eps, maxiter=200)
    if not 1.0 < root < 2.0:
        raise OutOfRange(f"root a0={root!r} is not inside (1, 2)")
    res = misiurewicz_residual(root, m, k)
    if abs(res) >= tol:
        raise NoSignChange(f"root search stalled with residual {res:.3g}")
    if cycle_multiplier(root, m, k) <= 1.0:
        raise NotRepelling(f"cycle multiplier {cycle_multiplier(root, m, k):.6g} <= 1")
    return root


# -- parameters -------------------------------------------------------------

def fiber_interval(a0: float, eps: float) -> tuple[float, float]:
    hi = a0 + eps
    return (a0 - eps - hi * hi, hi)


def check_invariance(a0: float, eps: float, interval, grid: int = 1000) -> bool:
    lo, hi = interval
    slack = eps / 10.0
    om = (np.arange(grid) + 0.5) / grid
    xs = np.linspace(lo, hi, grid)
    s = eps * np.sin(K.TWO_PI * om)
    img = a0 + s[:, None] - (xs * xs)[None, :]
    return bool(img.min() >= lo - slack and img.max() <= hi + slack)


def make_params(a0: float, eps: float = 1e-3, d: int = 16, *, eps_max: float = EPS_MAX,
                grid: int = 1000, validate: bool = True) -> MapParams:
    """Validated parameters with the invariant fiber interval ``[a0-eps-(a0+eps)**2, a0+eps]``.

    ``eps = 0`` is accepted and gives the unperturbed quadratic map.
    ``validate=False`` skips range checks; it exists for test harnesses that
    need values such as ``a0 = 2`` outside the admissible range.
    """
    a0 = float(a0)
    eps = float(eps)
    if validate:
        if not 1.0 < a0 < 2.0:
            raise InvalidParameter(f"a0 must lie in (1, 2), got {a0}")
        if isinstance(d, bool) or int(d) != d or d < 16:
            raise InvalidParameter(f"d must be an integer >= 16, got {d}")
        if not 0.0 <= eps < eps_max:
            raise InvalidParameter(f"eps must lie in [0, {eps_max}), got {eps}")
    interval = fiber_interval(a0, eps)
    if validate:
        if not abs(interval[0]) < interval[1]:
            raise InvalidParameter("fiber interval is not dominated by its upper end")
        if not check_invariance(a0, eps, interval, grid):
            raise NotInvariant(f"grid check failed for a0={a0}, eps={eps}")
    return MapParams(a0, eps, int(d), interval)


def default_params(eps: float = 1e-3, d: int = 16, m: int = 2, k: int = 1) -> MapParams:
    return make_params(find_misiurewicz(m, k), eps, d)


# -- dynamics ---------------------------------------------------------------

def step(params: MapParams, p: Point) -> Point:
    w, x = K.advance(np.uint64(p.word), p.x, params.a0, params.eps, params.d)
    return Point(0.0, x, word=int(w))


def orbit(params: MapParams, p: Point, n: int) -> OrbitRecord:
    if n < 1:
        raise InvalidParameter("orbit length must be >= 1")
    words, xs, logd, depths, sentinels = K.run_orbit(
        np.uint64(p.word), p.x, int(n), params.a0, params.eps, params.d, params.sqrt_eps)
    omegas = (words >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return OrbitRecord(words, omegas, xs, logd, depths, int(sentinels))


def lyapunov_estimate(params: MapParams, p: Point, n: int, *, max_sentinel_frac: float = 0.01):
    """``(log d, mean log|2 x_j|)`` along the orbit of ``p``.

    Returns ``(lambda_base, lambda_fiber, skipped)``; steps with ``x_j == 0``
    are skipped in the average and counted.
    """
    if n < 1000:
        raise InvalidParameter("lyapunov_estimate needs n >= 1000")
    sums, skipped = K.fiber_log_sums(np.array([p.word], dtype=np.uint64),
                                     np.array([p.x]), int(n), params.a0, params.eps, params.d)
    skipped = int(skipped[0])
    if skipped > max_sentinel_frac * n:
        raise DegenerateOrbit(f"{skipped} of {n} steps hit x = 0")
    return math.log(params.d), float(sums[0]) / (n - skipped), skipped


def random_points(params: MapParams, rng: np.random.Generator, size: int,
                  x_range: tuple[float, float] | None = None):
    """Lebesgue-uniform sample of ``S^1 x I`` (or ``S^1 x x_range``) as (words, xs)."""
    words = rng.integers(0, np.iinfo(np.uint64).max, size=size, dtype=np.uint64, endpoint=True)
    lo, hi = x_range if x_range is not None else params.fiber_interval
    xs = rng.uniform(lo, hi, size=size)
    return words, xs
