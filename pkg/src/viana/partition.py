"""Partition of the fiber into the strips ``I_r``, admissible curves and rectangles.

``I_r = [sqrt(eps) e^-r, sqrt(eps) e^-(r-1))`` for r >= 1, ``I_-r = -I_r``,
``I_0+ = I ∩ [sqrt(eps), inf)`` and ``I_0- = I ∩ (-inf, -sqrt(eps)]``.

Curves are stored symbolically: a constant or affine seed plus the list of
branches of the base map it has been pushed through.  Values are obtained by
unwinding the branches back to the seed and applying the fiber maps forward,
and derivative bounds are propagated with the exact chain rule, so
admissibility is certified rather than estimated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as K
from .core import MapParams
from .errors import AdmissibilityLost, BaseTooWide, CriticalPoint, InvalidParameter, NotFullBase

FOUR_PI2 = 4.0 * math.pi ** 2
GENTLE_SAMPLES = 1 << 10


# -- strips -----------------------------------------------------------------

@dataclass(frozen=True)
class PartitionIndex:
    kind: str  # "pos", "neg", "zero+", "zero-", "critical"
    r: int = 0

    def __repr__(self):
        if self.kind == "pos":
            return f"Pos({self.r})"
        if self.kind == "neg":
            return f"Neg({self.r})"
        return {"zero+": "ZeroPlus", "zero-": "ZeroMinus", "critical": "CriticalSentinel"}[self.kind]


def Pos(r: int) -> PartitionIndex:
    if r < 1:
        raise InvalidParameter("strip index must be >= 1")
    return PartitionIndex("pos", int(r))


def Neg(r: int) -> PartitionIndex:
    if r < 1:
        raise InvalidParameter("strip index must be >= 1")
    return PartitionIndex("neg", int(r))


ZeroPlus = PartitionIndex("zero+")
ZeroMinus = PartitionIndex("zero-")
CriticalSentinel = PartitionIndex("critical")


def level(r: int, eps: float) -> float:
    """Lower end ``sqrt(eps) * e^-r`` of ``I_r``; ``level(0) = sqrt(eps)``."""
    return K.level_low(r, math.sqrt(eps))


def classify(x: float, eps: float) -> PartitionIndex:
    r = K.depth_of(float(x), math.sqrt(eps))
    if r < 0:
        return CriticalSentinel
    if r == 0:
        return ZeroPlus if x > 0 else ZeroMinus
    return PartitionIndex("pos" if x > 0 else "neg", r)


def depth(x: float, eps: float) -> int:
    r = K.depth_of(float(x), math.sqrt(eps))
    if r < 0:
        raise CriticalPoint("depth is undefined at x = 0")
    return r


def depths(xs: np.ndarray, eps: float) -> np.ndarray:
    s = math.sqrt(eps)
    return np.array([K.depth_of(float(x), s) for x in np.ravel(xs)], dtype=np.int64)


def interval_of(idx: PartitionIndex, eps: float, extended: bool = False,
                fiber: tuple[float, float] | None = None) -> tuple[float, float]:
    """Endpoints of ``I_r``, or of ``I_r^+`` (the strip and its two neighbours).

    Next to ``I_0±`` the extended union stops at the ``I_0±`` block instead of
    wrapping to the other sign; ``fiber`` bounds ``I_0±`` (infinite if omitted).
    """
    if idx.kind == "critical":
        raise CriticalPoint("the critical sentinel has no interval")
    top = fiber[1] if fiber is not None else math.inf
    if idx.kind in ("pos", "zero+"):
        r = idx.r if idx.kind == "pos" else 0
        if r == 0:
            lo = level(1, eps) if extended else level(0, eps)
            return (lo, top)
        if extended:
            hi = top if r == 1 else level(r - 2, eps)
            return (level(r + 1, eps), hi)
        return (level(r, eps), level(r - 1, eps))
    mirror = None if fiber is None else (-fiber[1], -fiber[0])
    lo, hi = interval_of(PartitionIndex("pos" if idx.kind == "neg" else "zero+", idx.r), eps,
                         extended, mirror)
    return (-hi, -lo)


# -- admissible curves ------------------------------------------------------

@dataclass(frozen=True)
class Seed:
    """``X(theta) = value + slope * (theta - anchor)``."""

    value: float
    slope: float = 0.0
    anchor: float = 0.0

    def __call__(self, theta):
        return self.value + self.slope * (theta - self.anchor)


@dataclass(frozen=True)
class AdmissibleCurve:
    """Graph over ``base`` obtained from ``seed`` through the branches in ``chain``.

    ``bound1``/``bound2`` are certified suprema of ``|X'|``/``|X''|`` on the base.
    """

    base: tuple[float, float]
    seed: Seed
    chain: tuple[int, ...] = ()
    bound1: float = 0.0
    bound2: float = 0.0

    @classmethod
    def constant(cls, value: float, base=(0.0, 1.0)) -> "AdmissibleCurve":
        return cls(tuple(base), Seed(float(value)))

    @classmethod
    def affine(cls, value: float, slope: float, base=(0.0, 1.0), anchor: float | None = None):
        if anchor is None:
            anchor = 0.5 * (base[0] + base[1])
        return cls(tuple(base), Seed(float(value), float(slope), float(anchor)), (), abs(slope), 0.0)

    @property
    def width(self) -> float:
        return self.base[1] - self.base[0]

    def _unwind(self, theta: np.ndarray, d: int) -> list[np.ndarray]:
        thetas = [theta]
        for k in reversed(self.chain):
            thetas.append((thetas[-1] + k) / d)
        thetas.reverse()
        return thetas

    def __call__(self, params: MapParams, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if not self.chain:
            return self.seed(theta)
        flat = np.ascontiguousarray(theta.reshape(-1))
        out = K.eval_chain(self.seed.value, self.seed.slope, self.seed.anchor,
                           np.asarray(self.chain, dtype=np.int64), flat,
                           params.a0, params.eps, params.d)
        return out.reshape(theta.shape) if theta.ndim else out[0]

    def derivatives(self, params: MapParams, theta):
        """Pointwise ``(X, X', X'')`` by the chain rule along the branch history."""
        theta = np.asarray(theta, dtype=np.float64)
        thetas = self._unwind(theta, params.d)
        x = self.seed(thetas[0])
        x1 = np.full_like(x, self.seed.slope)
        x2 = np.zeros_like(x)
        d, eps = params.d, params.eps
        for th in thetas[:-1]:
            s, c = np.sin(K.TWO_PI * th), np.cos(K.TWO_PI * th)
            y = params.a0 + eps * s - x * x
            y1 = (K.TWO_PI * eps * c - 2.0 * x * x1) / d
            y2 = (-FOUR_PI2 * eps * s - 2.0 * x1 * x1 - 2.0 * x * x2) / (d * d)
            x, x1, x2 = y, y1, y2
        return x, x1, x2

    def restrict(self, base) -> "AdmissibleCurve":
        return replace(self, base=(float(base[0]), float(base[1])))

    def sample(self, params: MapParams, n: int = 64):
        """Values at the midpoints of ``n`` equal cells and the Lipschitz margin covering each cell."""
        lo, hi = self.base
        h = (hi - lo) / n
        theta = lo + h * (np.arange(n) + 0.5)
        return self(params, theta), self.bound1 * 0.5 * h

    def to_dict(self) -> dict:
        return {
            "base": list(self.base),
            "seed": {"value": self.seed.value, "slope": self.seed.slope, "anchor": self.seed.anchor},
            "chain": list(self.chain),
            "bound1": self.bound1,
            "bound2": self.bound2,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "AdmissibleCurve":
        s = rec["seed"]
        return cls(tuple(rec["base"]), Seed(s["value"], s["slope"], s["anchor"]),
                   tuple(rec["chain"]), rec["bound1"], rec["bound2"])


def push_bounds(params: MapParams, bound1: float, bound2: float) -> tuple[float, float]:
    """Chain-rule bounds on ``|Y'|, |Y''|`` of the image of a curve with bounds ``bound1, bound2``."""
    d, eps = params.d, params.eps
    m = max(abs(params.lo), abs(params.hi))
    b1 = (K.TWO_PI * eps + 2.0 * m * bound1) / d
    b2 = (FOUR_PI2 * eps + 2.0 * bound1 * bound1 + 2.0 * m * bound2) / (d * d)
    return b1, b2


def push_curve(params: MapParams, c: AdmissibleCurve, *, check: bool = True) -> list[AdmissibleCurve]:
    """Image of ``c`` under the skew product, split at ``0 ∈ S^1`` if it wraps.

    A base of length exactly ``1/d`` is accepted: its image is the whole
    circle, parametrised by ``[0, 1)``.
    """
    d = params.d
    lo, hi = c.base
    if hi - lo > 1.0 / d * (1 + 1e-12):
        raise BaseTooWide(f"base width {hi - lo:.6g} exceeds 1/d = {1.0 / d:.6g}")
    k = int(math.floor(lo * d + 1e-9))
    b1, b2 = push_bounds(params, c.bound1, c.bound2)
    if check and params.eps > 0 and (b1 > params.eps or b2 > params.eps):
        raise AdmissibilityLost(f"certified bounds {b1:.3g}, {b2:.3g} exceed eps = {params.eps}")
    new_lo = max(lo * d - k, 0.0)
    new_hi = hi * d - k
    if new_hi <= 1.0 + 1e-12:
        return [AdmissibleCurve((new_lo, min(new_hi, 1.0)), c.seed, c.chain + (k,), b1, b2)]
    return [
        AdmissibleCurve((new_lo, 1.0), c.seed, c.chain + (k,), b1, b2),
        AdmissibleCurve((0.0, new_hi - 1.0), c.seed, c.chain + ((k + 1) % d,), b1, b2),
    ]


# -- rectangles -------------------------------------------------------------

@dataclass(frozen=True)
class Rectangle:
    hor: tuple[float, float]
    bottom: AdmissibleCurve
    top: AdmissibleCurve

    @classmethod
    def flat(cls, y0: float, y1: float, hor=(0.0, 1.0)) -> "Rectangle":
        return cls(tuple(hor), AdmissibleCurve.constant(y0, hor), AdmissibleCurve.constant(y1, hor))

    @property
    def width(self) -> float:
        return self.hor[1] - self.hor[0]

    @property
    def full_base(self) -> bool:
        return self.hor[0] == 0.0 and self.hor[1] == 1.0

    def heights(self, params: MapParams, n: int = 256) -> np.ndarray:
        lo, hi = self.hor
        theta = lo + (hi - lo) * (np.arange(n) + 0.5) / n
        return self.top(params, theta) - self.bottom(params, theta)

    def area(self, params: MapParams, n: int = 256) -> float:
        """``|hor| * mean height`` over ``n`` midpoint samples."""
        return self.width * float(np.mean(self.heights(params, n)))

    def is_valid(self, params: MapParams, n: int = 256) -> bool:
        return bool(np.all(self.heights(params, n) > 0))

    def to_dict(self) -> dict:
        return {"hor": list(self.hor), "bottom": self.bottom.to_dict(), "top": self.top.to_dict()}


def left_side(r: Rectangle, params: MapParams) -> tuple[float, float]:
    th = r.hor[0]
    return float(r.bottom(params, th)), float(r.top(params, th))


def _is_power_of(w: float, d: int) -> bool:
    s = round(-math.log(w) / math.log(d)) if w < 1 else 0
    return abs(w * d ** s - 1.0) < 1e-9


def cut_vertically(r: Rectangle, params: MapParams) -> list[Rectangle]:
    d = params.d
    if not _is_power_of(r.width, d):
        raise InvalidParameter(f"base width {r.width} is not a power of 1/d")
    lo = r.hor[0]
    w = r.width / d
    out = []
    for j in range(d):
        hor = (lo + j * w, lo + (j + 1) * w) if j < d - 1 else (lo + j * w, r.hor[1])
        out.append(Rectangle(hor, r.bottom.restrict(hor), r.top.restrict(hor)))
    return out


@dataclass(frozen=True)
class CurveRange:
    """Certified range of a curve over its base."""

    lo: float
    hi: float


def curve_range(c: AdmissibleCurve, params: MapParams, n: int = GENTLE_SAMPLES) -> CurveRange:
    vals, margin = c.sample(params, n)
    return CurveRange(float(vals.min()) - margin, float(vals.max()) + margin)


def gentle_clause(r: Rectangle, params: MapParams, n: int = GENTLE_SAMPLES) -> str | None:
    """Name of the gentleness clause ``r`` satisfies, or None."""
    if not r.full_base:
        raise NotFullBase("gentleness is defined for rectangles over the full circle")
    eps = params.eps
    se = math.sqrt(eps)
    b = curve_range(r.bottom, params, n)
    t = curve_range(r.top, params, n)
    if b.lo >= se and b.hi <= se and t.lo >= 2 * se and t.hi <= params.hi:
        return "collar+"
    if t.hi <= -se and t.lo >= -se and b.hi <= -2 * se and b.lo >= params.lo:
        return "collar-"
    s = 1
    while level(s + 5, eps) > 0.0 and s < 400:
        if b.hi <= level(s + 5, eps) and t.lo >= level(s - 1, eps):
            return f"strips+{s}"
        if t.lo >= -level(s + 5, eps) and b.hi <= -level(s - 1, eps):
            return f"strips-{s}"
        s += 1
    return None


def is_gentle(r: Rectangle, params: MapParams, n: int = GENTLE_SAMPLES) -> bool:
    """Whether ``r`` contains the ``(sqrt eps, 2 sqrt eps)`` collar or six consecutive strips.

    Containment uses ``n`` samples per curve widened by the Lipschitz margin,
    so a True answer is certified.
    """
    return gentle_clause(r, params, n) is not None


@dataclass
class CurveCheck:
    """Outcome of :func:`check_pushforwards`."""

    curves: int
    pushes: int
    certified_ok: int
    max_bound1: float
    max_bound2: float
    max_sampled1: float
    max_sampled2: float
    dominated: bool

    @property
    def all_ok(self) -> bool:
        return self.certified_ok == self.curves and self.dominated

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["all_ok"] = self.all_ok
        return d


def random_admissible_curve(params: MapParams, rng: np.random.Generator) -> AdmissibleCurve:
    """Affine curve over a random arc of length ``1/d`` with ``|slope| <= eps`` inside I."""
    lo = float(rng.uniform(0.0, 1.0 - 1.0 / params.d))
    base = (lo, lo + 1.0 / params.d)
    slope = float(rng.uniform(-1.0, 1.0)) * params.eps
    span = abs(slope) / (2 * params.d)
    value = float(rng.uniform(params.lo + span, params.hi - span))
    return AdmissibleCurve.affine(value, slope, base)


def check_pushforwards(params: MapParams, curves: int = 100, pushes: int = 50, seed: int = 0,
                       samples: int = 64) -> CurveCheck:
    """Push random admissible curves forward, cutting to one arc of length ``1/d`` each time.

    A curve passes when every certified bound stays at most ``eps``.  As an
    independent check the chain-rule derivatives are sampled on each image
    and must not exceed the certified bounds.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    ok = 0
    mb1 = mb2 = ms1 = ms2 = 0.0
    dominated = True
    d = params.d
    for _ in range(curves):
        c = random_admissible_curve(params, rng)
        good = True
        for _ in range(pushes):
            try:
                pieces = push_curve(params, c)
            except AdmissibilityLost:
                good = False
                break
            lo, hi = pieces[0].base if len(pieces) == 1 else (0.0, 1.0)
            th = lo + (hi - lo) * (np.arange(samples) + 0.5) / samples
            _, y1, y2 = _image_derivatives(params, pieces, th)
            s1, s2 = float(np.max(np.abs(y1))), float(np.max(np.abs(y2)))
            ms1, ms2 = max(ms1, s1), max(ms2, s2)
            b1, b2 = pieces[0].bound1, pieces[0].bound2
            mb1, mb2 = max(mb1, b1), max(mb2, b2)
            dominated &= s1 <= b1 * (1 + 1e-9) and s2 <= b2 * (1 + 1e-9)
            good &= b1 <= params.eps and b2 <= params.eps
            j = int(rng.integers(d))
            start = lo + (hi - lo) * j / d
            piece = _piece_at(pieces, start)
            width = min(1.0 / d, piece.base[1] - start)
            c = piece.restrict((start, start + width))
        ok += good
    return CurveCheck(curves, pushes, ok, mb1, mb2, ms1, ms2, bool(dominated))


def _piece_at(pieces, theta):
    for p in pieces:
        if p.base[0] <= theta < p.base[1]:
            return p
    return pieces[-1]


def _image_derivatives(params, pieces, thetas):
    out = [np.empty_like(thetas) for _ in range(3)]
    for p in pieces:
        sel = (thetas >= p.base[0]) & (thetas <= p.base[1])
        if sel.any():
            vals = p.derivatives(params, thetas[sel])
            for o, v in zip(out, vals):
                o[sel] = v
    return out
