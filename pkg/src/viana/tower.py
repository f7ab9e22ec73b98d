"""Growing admissible rectangles to a fixed size, and the return-time process built on it.

Growth follows full-circle rectangles forward.  Before each step a piece is
cut vertically into ``d`` parts whose images are again full-circle
rectangles; the parts differ only through the ``eps sin(2 pi omega)`` term,
so one of them, drawn from a seeded generator, is followed as the
representative of all ``d`` (the others are ``eps``-close copies).  A
piece is therefore a rectangle in current coordinates together with its
branch history, which is enough to pull any height back to the input and
measure masses and distortion.

Masses are measured along the left column: horizontal cuts are pulled back
to the input through the representative branches with the difference form
``x' - y' = s (y - x) / (sqrt(A - x) + sqrt(A - y))``, which keeps full
relative precision for pieces that have been expanded by many orders of
magnitude.  Fractions of each split sum to one, so mass is conserved up to
rounding.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._shards import map_shards
from .core import MapParams, Point
from .errors import BudgetExceeded, InvalidParameter, NotFullBase, PreconditionTooThin, TooFewResolved
from .partition import (
    AdmissibleCurve,
    Neg,
    Pos,
    Rectangle,
    curve_range,
    gentle_clause,
    interval_of,
    left_side,
    level,
    push_curve,
)
from .returns import ReturnConfig
from .tails import StretchedFit, TailSequence, fit_stretched_exponential

RETURNED, PENDING, FOLD, BUDGET = "returned", "pending", "fold", "budget"
_STATUS_CODE = {RETURNED: 0, PENDING: 1, FOLD: 2, BUDGET: 3}


@dataclass(frozen=True)
class StripTarget:
    """The return target ``S^1 x Lambda`` with ``Lambda = I_1`` or ``I_-1``."""

    sign: int
    interval: tuple[float, float]

    @classmethod
    def for_sign(cls, sign: int, eps: float) -> "StripTarget":
        if sign not in (1, -1):
            raise InvalidParameter("sign must be +1 or -1")
        return cls(sign, interval_of(Pos(1) if sign > 0 else Neg(1), eps))


@dataclass
class GrowthPiece:
    """One output piece of :func:`grow_to_fixed_size`.

    ``rect`` is the image rectangle at ``time``; ``mass`` is the Lebesgue
    measure of its preimage in the input and ``u`` its extent on the input's
    left column as fractions from the bottom.  ``distortion`` is the ratio
    of the largest to smallest accumulated ``|d_x f^time|`` over sampled
    points of the piece.
    """

    rect: Rectangle
    time: int
    mass: float
    u: tuple[float, float]
    status: str
    distortion: float
    clause: str | None = None

    def as_dict(self, params: MapParams | None = None) -> dict:
        d = {"time": self.time, "mass": self.mass, "u": list(self.u), "status": self.status,
             "distortion": self.distortion, "clause": self.clause, "rect": self.rect.to_dict()}
        if params is not None:
            lo, hi = left_side(self.rect, params)
            d["left_size"] = hi - lo
        return d


@dataclass
class GrowthResult:
    returned: list[GrowthPiece]
    pending: list[GrowthPiece]
    unresolved: list[GrowthPiece]
    input_mass: float
    budget: int
    meta: dict = field(default_factory=dict)

    @property
    def pieces(self) -> list[GrowthPiece]:
        return sorted(self.returned + self.pending + self.unresolved, key=lambda p: p.u[0])

    def _mass(self, pieces) -> float:
        return math.fsum(p.mass for p in pieces) / self.input_mass

    @property
    def returned_mass(self) -> float:
        """Fraction of the input's Lebesgue measure in returned pieces."""
        return self._mass(self.returned)

    @property
    def pending_mass(self) -> float:
        return self._mass(self.pending)

    @property
    def unresolved_mass(self) -> float:
        return self._mass(self.unresolved)

    @property
    def conservation_error(self) -> float:
        return abs(self._mass(self.returned + self.pending + self.unresolved) - 1.0)

    @property
    def max_time(self) -> int:
        return max((p.time for p in self.returned + self.pending), default=0)

    @property
    def max_distortion(self) -> float:
        return max((p.distortion for p in self.returned + self.pending), default=1.0)

    def locate(self, u: float) -> GrowthPiece:
        """Piece whose left-column extent contains the fraction ``u``."""
        pieces = self.pieces
        edges = np.array([p.u[1] for p in pieces])
        i = int(np.searchsorted(edges, u, side="right"))
        return pieces[min(i, len(pieces) - 1)]

    def table(self):
        """``(upper u edges, times, status codes)`` sorted by position, for compiled lookups."""
        pieces = self.pieces
        return (np.array([p.u[1] for p in pieces]), np.array([p.time for p in pieces], dtype=np.int64),
                np.array([_STATUS_CODE[p.status] for p in pieces], dtype=np.int64))

    def summary(self) -> dict:
        return {"returned_mass": self.returned_mass, "pending_mass": self.pending_mass,
                "unresolved_mass": self.unresolved_mass, "conservation_error": self.conservation_error,
                "max_time": self.max_time, "max_distortion": self.max_distortion,
                "returned": len(self.returned), "pending": len(self.pending),
                "unresolved": len(self.unresolved), "budget": self.budget}

    def to_dict(self, params: MapParams) -> dict:
        return {"summary": self.summary(), "meta": self.meta,
                "pieces": [p.as_dict(params) for p in self.pieces]}


# -- growth -----------------------------------------------------------------

@dataclass
class _Piece:
    bottom: AdmissibleCurve
    top: AdmissibleCurve
    time: int
    mass: float
    u: tuple[float, float]
    hist: tuple[int, ...] = ()
    signs: tuple[int, ...] = ()
    orient: int = 1          # +1 when increasing x means increasing u

    @property
    def rect(self) -> Rectangle:
        return Rectangle((0.0, 1.0), self.bottom, self.top)


def _pull_back(params: MapParams, hist, signs, thetas: np.ndarray, ys: np.ndarray):
    """Pull heights ``ys`` (ascending along axis 0) at columns ``thetas`` back through ``hist``.

    Returns ``(differences of consecutive preimages, sum of log|2 x_j| per point)``.
    """
    d, a0, eps = params.d, params.a0, params.eps
    ys = np.array(ys, dtype=np.float64)
    diffs = np.diff(ys, axis=0)
    logs = np.zeros_like(ys)
    th = np.array(thetas, dtype=np.float64)
    for k, s in zip(reversed(hist), reversed(signs)):
        th = (th + k) / d
        r = np.sqrt(np.maximum(a0 + eps * np.sin(K.TWO_PI * th) - ys, 0.0))
        den = r[:-1] + r[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            diffs = np.where(den > 0, -s * diffs / den, 0.0)
        ys = s * r
        with np.errstate(divide="ignore"):
            logs += np.log(2.0 * r)
    return diffs, logs


def _fractions(params: MapParams, piece: _Piece, cuts) -> np.ndarray:
    """Mass fractions of the bands between ``cuts`` (ascending heights at the current time)."""
    b0, t0 = float(piece.bottom(params, 0.0)), float(piece.top(params, 0.0))
    ys = np.clip(np.concatenate([[b0], np.asarray(cuts, float), [t0]]), b0, t0)
    diffs, _ = _pull_back(params, piece.hist, piece.signs, np.array(0.0), ys)
    w = np.abs(diffs)
    total = math.fsum(w)
    if not total > 0:
        w = np.diff(ys)
        total = math.fsum(w)
    return w / total if total > 0 else np.full(len(w), 1.0 / len(w))


def _distortion(params: MapParams, piece: _Piece, bottom, top, cols: int = 8, rows: int = 8) -> float:
    if not piece.hist:
        return 1.0
    th = (np.arange(cols) + 0.5) / cols
    b = np.asarray(bottom(params, th) if callable(bottom) else np.full(cols, bottom))
    t = np.asarray(top(params, th) if callable(top) else np.full(cols, top))
    frac = (np.arange(rows) + 0.5) / rows
    ys = b[None, :] + frac[:, None] * (t - b)[None, :]
    _, logs = _pull_back(params, piece.hist, piece.signs, th[None, :], ys)
    if not np.all(np.isfinite(logs)):
        return math.inf
    return float(math.exp(logs.max() - logs.min()))


class _Grower:
    def __init__(self, params: MapParams, budget: int, eta: float, rng: np.random.Generator,
                 input_mass: float):
        self.p = params
        self.budget = budget
        self.rng = rng
        se = params.sqrt_eps
        self.delta = math.exp(-9) * se
        self.H = 3.0 * se
        self.L = params.eps ** (1 - 1.5 * eta)
        self.input_mass = input_mass
        self.out: dict[str, list[GrowthPiece]] = {RETURNED: [], PENDING: [], FOLD: [], BUDGET: []}
        self.queue: deque[_Piece] = deque()

    # bookkeeping ----------------------------------------------------------

    def emit(self, piece: _Piece, status: str, bottom=None, top=None, clause=None):
        bottom = piece.bottom if bottom is None else bottom
        top = piece.top if top is None else top
        rect = Rectangle((0.0, 1.0), bottom, top)
        dist = _distortion(self.p, piece, bottom, top)
        self.out[status].append(GrowthPiece(rect, piece.time, piece.mass, piece.u, status, dist, clause))

    def split(self, piece: _Piece, cuts) -> list[_Piece]:
        """Children of ``piece`` between ascending flat ``cuts``, bottom to top."""
        fr = _fractions(self.p, piece, cuts)
        curves = [piece.bottom] + [AdmissibleCurve.constant(c) for c in cuts] + [piece.top]
        lo, hi = piece.u
        width = hi - lo
        kids = []
        acc = 0.0
        for j in range(len(fr)):
            if piece.orient > 0:
                u = (lo + width * acc, lo + width * (acc + fr[j]))
            else:
                u = (hi - width * (acc + fr[j]), hi - width * acc)
            acc += fr[j]
            kids.append(_Piece(curves[j], curves[j + 1], piece.time, piece.mass * fr[j], u,
                               piece.hist, piece.signs, piece.orient))
        return kids

    def push(self, piece: _Piece, sign: int) -> _Piece:
        d = self.p.d
        k = int(self.rng.integers(d))
        base = (k / d, (k + 1) / d)
        nb = push_curve(self.p, piece.bottom.restrict(base))[0]
        nt = push_curve(self.p, piece.top.restrict(base))[0]
        if sign > 0:
            nb, nt = nt, nb
        return _Piece(nb, nt, piece.time + 1, piece.mass, piece.u, piece.hist + (k,),
                      piece.signs + (sign,), piece.orient * -sign)

    def advance(self, piece: _Piece, sign: int):
        if piece.time >= self.budget:
            self.emit(piece, BUDGET)
        else:
            self.queue.append(self.push(piece, sign))

    def settle(self, piece: _Piece, b, t):
        """Emit ``piece`` as pending if gentle; otherwise push it if one-signed, else record a fold."""
        clause = gentle_clause(piece.rect, self.p)
        if clause is not None:
            self.emit(piece, PENDING, clause=clause)
        elif b.lo > 0:
            self.advance(piece, 1)
        elif t.hi < 0:
            self.advance(piece, -1)
        else:
            self.emit(piece, FOLD)

    # the procedure --------------------------------------------------------

    def step(self, piece: _Piece):
        p = self.p
        b = curve_range(piece.bottom, p)
        t = curve_range(piece.top, p)
        if b.lo >= self.delta:
            return self.advance(piece, 1)
        if t.hi <= -self.delta:
            return self.advance(piece, -1)
        se = p.sqrt_eps
        lam = level(1, p.eps)
        if t.hi > self.H and t.lo >= 2 * se and b.hi < lam:
            return self.three_way(piece, 1, lam, se)
        if b.lo < -self.H and b.hi <= -2 * se and t.lo > -lam:
            return self.three_way(piece, -1, lam, se)
        self.slice(piece, b, t)

    def three_way(self, piece: _Piece, sign: int, lam: float, se: float):
        if sign > 0:
            near, ret, far = self.split(piece, [lam, se])
            self.emit(ret, RETURNED, clause="+")
            self.settle(far, curve_range(far.bottom, self.p), curve_range(far.top, self.p))
        else:
            far, ret, near = self.split(piece, [-se, -lam])
            self.emit(ret, RETURNED, clause="-")
            self.settle(far, curve_range(far.bottom, self.p), curve_range(far.top, self.p))
        clause = gentle_clause(near.rect, self.p)
        if clause is not None:
            self.emit(near, PENDING, clause=clause)
        else:
            self.queue.append(near)

    def slice(self, piece: _Piece, b, t):
        """Cut the part closest to ``x = 0`` off as pending; the rest stays clear of it."""
        p = self.p
        sign = 1 if t.lo >= -b.hi else -1
        near_hi, far_lo = (b.hi, t.lo) if sign > 0 else (-t.lo, -b.hi)
        lef = abs(float(piece.top(p, 0.0) - piece.bottom(p, 0.0)))
        target = max(self.delta, min(lef / 5.0, far_lo / 2.0))
        gentle_ok = True
        if near_hi <= 0:
            y = target
        else:
            j = math.floor(math.log(p.sqrt_eps / near_hi)) - 6
            gentle_ok = j >= 0
            y = max(target, level(j, p.eps)) if gentle_ok else max(self.delta, near_hi) * (1 + 1e-6)
        if not y < far_lo * (1 - 1e-9):
            return self.settle(piece, b, t)
        if sign > 0:
            near, rest = self.split(piece, [y])
        else:
            rest, near = self.split(piece, [-y])
        self.queue.append(rest)
        self.settle(near, curve_range(near.bottom, p), curve_range(near.top, p))

    def run(self, piece: _Piece):
        self.queue.append(piece)
        while self.queue:
            self.step(self.queue.popleft())


def grow_to_fixed_size(params: MapParams, rect: Rectangle, budget: int = 400, *, eta: float = 0.1,
                       seed: int = 0, raise_on_budget: bool = True) -> GrowthResult:
    """Partition ``rect`` into returned, pending and unresolved pieces.

    Each piece is followed until its image meets ``|x| < e^-9 sqrt eps``.  If
    it also reaches beyond ``3 sqrt eps`` on one side the strip ``Lambda``
    on that side is cut out and returned, the far part is pending (it holds
    the ``sqrt eps`` collar) and the near part continues.  Otherwise the
    part nearest to ``x = 0`` is cut off with a horizontal line at about a
    fifth of the left side and set aside as pending, and the rest keeps
    going.  Near parts too irregular to be gentle are pushed on while they
    have one sign and recorded as unresolved folds otherwise.

    Raises
    ------
    NotFullBase
        ``rect`` is not over the full circle.
    PreconditionTooThin
        Its left side is shorter than ``eps^(1 - 1.5 eta)``.
    BudgetExceeded
        Some piece needed more than ``budget`` iterates; the partial result
        is attached as ``.result`` (pass ``raise_on_budget=False`` to get it
        returned instead).
    """
    if not rect.full_base:
        raise NotFullBase("growth needs a rectangle over the full circle")
    lo, hi = left_side(rect, params)
    thin = params.eps ** (1 - 1.5 * eta)
    if hi - lo < thin:
        raise PreconditionTooThin(f"left side {hi - lo:.4g} < eps^(1-1.5 eta) = {thin:.4g}")
    for c in (rect.bottom, rect.top):
        if c.bound1 > params.eps or c.bound2 > params.eps:
            raise InvalidParameter("boundary curves are not admissible")
    if not rect.is_valid(params):
        raise InvalidParameter("bottom curve is not below the top curve")
    mass = rect.area(params)
    g = _Grower(params, int(budget), eta, np.random.default_rng(np.random.SeedSequence([seed, 0x6707])),
                mass)
    g.run(_Piece(rect.bottom, rect.top, 0, mass, (0.0, 1.0)))
    result = GrowthResult(g.out[RETURNED], g.out[PENDING], g.out[FOLD] + g.out[BUDGET], mass, int(budget),
                          {"params": params.as_dict(), "eta": eta, "seed": seed,
                           "input": rect.to_dict(), "left_size": hi - lo})
    if g.out[BUDGET] and raise_on_budget:
        lost = math.fsum(p.mass for p in g.out[BUDGET]) / mass
        raise BudgetExceeded(f"{len(g.out[BUDGET])} pieces exceeded budget {budget} "
                             f"(unresolved mass {lost:.3g})", result)
    return result


def random_gentle_rectangle(params: MapParams, rng: np.random.Generator, eta: float = 0.1) -> Rectangle:
    """A random gentle rectangle over the full circle with affine boundaries.

    Draws one of the collar clauses or a six-strip block ``I_s .. I_{s+5}``
    with ``s <= 3`` (deeper blocks are thinner than ``eps^(1 - 1.5 eta)``),
    on either side of ``x = 0``, then places the free boundaries at random.
    """
    eps, se = params.eps, params.sqrt_eps
    thin = eps ** (1 - 1.5 * eta)

    def curve(value):
        return AdmissibleCurve.affine(value, float(rng.uniform(-0.5, 0.5)) * eps)

    sign = 1 if rng.random() < 0.5 else -1
    if rng.random() < 0.25:
        far = float(rng.uniform(2 * se + eps, min(0.5, params.hi - eps)))
        near = AdmissibleCurve.constant(se)
        if sign > 0:
            return Rectangle((0.0, 1.0), near, curve(far))
        return Rectangle((0.0, 1.0), curve(-far), AdmissibleCurve.constant(-se))
    s = int(rng.integers(1, 4))
    while level(s - 1, eps) - level(s + 5, eps) < thin:
        s -= 1
    lo = float(rng.uniform(-0.2, level(s + 5, eps) - eps))
    hi = float(rng.uniform(level(s - 1, eps) + eps, 0.5))
    if sign > 0:
        return Rectangle((0.0, 1.0), curve(lo), curve(hi))
    return Rectangle((0.0, 1.0), curve(-hi), curve(-lo))


# -- the return process -------------------------------------------------------

def canonical_rectangles(params: MapParams) -> list[tuple[float, float]]:
    """Flat starting rectangles for the growth phase, indexed by sign and depth.

    Index ``q = 0, 1, 2`` holds the six-strip blocks ``I_s .. I_{s+5}`` for
    depths ``s = 1, 2, 3``; ``q = 3`` is ``(0, sqrt(eps) e^-2)`` and serves
    every deeper point, since six-strip blocks from depth 4 on are thinner
    than ``eps^(1 - 1.5 eta)``.  ``q + 4`` are the mirror images.
    """
    eps = params.eps
    pos = [(level(s + 5, eps), level(s - 1, eps)) for s in (1, 2, 3)] + [(0.0, level(2, eps))]
    return pos + [(-hi, -lo) for lo, hi in pos]


@dataclass
class ReturnModel:
    """Growth results for the canonical rectangles, in the compiled lookup layout."""

    rects: list[tuple[float, float]]
    growth: list[GrowthResult]
    lo: np.ndarray = field(init=False)
    hi: np.ndarray = field(init=False)
    off: np.ndarray = field(init=False)
    edges: np.ndarray = field(init=False)
    times: np.ndarray = field(init=False)
    codes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.lo = np.array([r[0] for r in self.rects])
        self.hi = np.array([r[1] for r in self.rects])
        tabs = [g.table() for g in self.growth]
        self.off = np.cumsum([0] + [len(t[0]) for t in tabs]).astype(np.int64)
        self.edges = np.concatenate([t[0] for t in tabs])
        self.times = np.concatenate([t[1] for t in tabs])
        self.codes = np.concatenate([t[2] for t in tabs])

    @property
    def q(self) -> int:
        return int(max(g.max_time for g in self.growth))

    def summary(self) -> list[dict]:
        return [dict(g.summary(), rect=list(r)) for r, g in zip(self.rects, self.growth)]

    def locate(self, x: float, sqrt_eps: float) -> tuple[int, int]:
        """``(time, status code)`` for a point at height ``x`` in the critical strip."""
        q = _rect_index(x, sqrt_eps)
        u = (x - self.lo[q]) / (self.hi[q] - self.lo[q])
        a, b = self.off[q], self.off[q + 1]
        i = min(int(np.searchsorted(self.edges[a:b], u, side="right")), b - a - 1)
        return int(self.times[a + i]), int(self.codes[a + i])


def _rect_index(x, sqrt_eps):
    s = K.depth_of(x, sqrt_eps)
    return (0 if x > 0 else 4) + min(max(s, 1), 4) - 1


def build_return_model(params: MapParams, budget: int = 400, *, eta: float = 0.1, seed: int = 0) -> ReturnModel:
    rects = canonical_rectangles(params)
    growth = [grow_to_fixed_size(params, Rectangle.flat(lo, hi), budget, eta=eta, seed=seed + i,
                                 raise_on_budget=False) for i, (lo, hi) in enumerate(rects)]
    return ReturnModel(rects, growth)


@dataclass(frozen=True)
class ReturnRecord:
    stopping_times: tuple[int, ...]
    k_max: int
    R: int | None
    resolved: bool


class ReturnSample:
    """Records of :func:`simulate_return_process`; behaves as a list of :class:`ReturnRecord`."""

    def __init__(self, stops: np.ndarray, counts: np.ndarray, R: np.ndarray, resolved: np.ndarray,
                 sentinel: np.ndarray, meta: dict):
        self.stops = stops
        self.counts = counts
        self.R = R
        self.resolved = resolved
        self.sentinel = sentinel
        self.meta = meta

    def __len__(self) -> int:
        return len(self.counts)

    def __getitem__(self, i) -> ReturnRecord:
        c = int(self.counts[i])
        ok = bool(self.resolved[i])
        return ReturnRecord(tuple(int(t) for t in self.stops[i, :c]), max(c - 1, 0),
                            int(self.R[i]) if ok else None, ok)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def k_max(self) -> np.ndarray:
        return np.maximum(self.counts - 1, 0)

    def to_csv(self) -> str:
        width = int(self.counts.max()) if len(self) else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id"] + [f"T_{j}" for j in range(width)] + ["k_max", "R", "resolved"])
        for i in range(len(self)):
            c = int(self.counts[i])
            row = [i] + [int(t) for t in self.stops[i, :c]] + [""] * (width - c)
            w.writerow(row + [max(c - 1, 0), int(self.R[i]) if self.resolved[i] else "",
                              int(bool(self.resolved[i]))])
        return buf.getvalue()


def return_process_reference(start: Point, n_max: int, p0: int, first_return, locate, advance):
    """Plain-Python version of the sampler with injectable dynamics.

    ``first_return(point, limit)`` gives ``(n, point_n)`` or None,
    ``locate(point)`` gives ``(time, status code)`` and
    ``advance(point, t)`` iterates.  Returns a :class:`ReturnRecord`.
    """
    t, p, stops = 0, start, []
    while n_max - t >= p0:
        hit = first_return(p, n_max - t)
        if hit is None:
            break
        n, p = hit
        t += n
        tt, code = locate(p)
        p = advance(p, tt)
        t += tt
        stops.append(t)
        if code == 0:
            return ReturnRecord(tuple(stops), len(stops) - 1, t, True)
    return ReturnRecord(tuple(stops), max(len(stops) - 1, 0), None, False)


def simulate_return_process(params: MapParams, cfg: ReturnConfig, samples: int, n_max: int, seed: int = 0,
                            *, model: ReturnModel | None = None, shards: int = 1, workers: int = 1,
                            budget: int = 400) -> ReturnSample:
    """Sample points of ``S^1 x Lambda_+-`` and run the stopping-time process to ``n_max``.

    Each round waits for the first hyperbolic return at or after ``p0``
    (standing in for the partition of the hyperbolic phase), then locates
    the point in the canonical gentle rectangle of its depth and charges the
    time of the growth piece it falls in.  The point stops when that piece
    is a returned one; the time after each round is a stopping time T_i.
    Points whose growth piece was left unresolved continue like pending ones.
    """
    if samples < 1000:
        raise InvalidParameter("simulate_return_process needs at least 1000 samples")
    if n_max < cfg.p0:
        raise InvalidParameter("n_max must be >= p0")
    model = build_return_model(params, budget, eta=cfg.eta, seed=seed) if model is None else model
    frac = cfg.c_prime_ratio
    lam = [interval_of(Pos(1), params.eps), interval_of(Neg(1), params.eps)]
    width = n_max // cfg.p0 + 1

    def work(rng, size, _):
        words = rng.integers(0, np.iinfo(np.uint64).max, size=size, dtype=np.uint64, endpoint=True)
        sign = rng.integers(0, 2, size=size)
        x = rng.uniform(0.0, 1.0, size=size)
        xs = np.where(sign == 0, lam[0][0] + x * (lam[0][1] - lam[0][0]),
                      lam[1][0] + x * (lam[1][1] - lam[1][0]))
        return K.return_process(words, xs, int(n_max), cfg.p0, cfg.min_deep, frac.numerator,
                                frac.denominator, params.a0, params.eps, params.d, params.sqrt_eps,
                                model.lo, model.hi, model.off, model.edges, model.times, model.codes,
                                width)

    parts = map_shards(work, seed, samples, shards, workers)
    stops, counts, R, resolved, sentinel = (np.concatenate([p[j] for p in parts]) for j in range(5))
    meta = {"params": params.as_dict(), "config": cfg.as_dict(), "samples": samples, "n_max": n_max,
            "seed": seed, "shards": shards, "budget": budget, "q": model.q,
            "growth": model.summary(),
            "model": "first hyperbolic return >= p0, then growth piece of the canonical rectangle "
                     "at the point's depth; per-point proxy for the partition's return time"}
    return ReturnSample(stops, counts, R, resolved, sentinel, meta)


@dataclass
class TailReport:
    tail: TailSequence
    fit: StretchedFit
    kmax_hist: dict[int, int]
    kmax_exceed: list[tuple[int, float]]
    resolved: int
    unresolved: int
    n_lo: int
    n_hi: int
    delta: float

    def as_dict(self) -> dict:
        return {"fit": self.fit.as_dict(), "kmax_hist": {str(k): v for k, v in self.kmax_hist.items()},
                "kmax_exceed": [list(e) for e in self.kmax_exceed], "resolved": self.resolved,
                "unresolved": self.unresolved, "n_lo": self.n_lo, "n_hi": self.n_hi, "delta": self.delta}

    def tail_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "fraction"])
        for n, f in enumerate(self.tail.values):
            w.writerow([n, repr(float(f))])
        return buf.getvalue()


def return_tail_report(records, n_max: int, p0: int = 1, *, delta: float = 0.2, quantile: float = 0.999,
                       min_resolved: int = 1000) -> TailReport:
    """Tail ``P(R >= n)``, its stretched-exponential fit and the ``k_max`` statistics.

    Unresolved records count as ``R >= n_max``.  The fit runs over
    ``[p0, q]`` with ``q`` the ``quantile`` of the resolved return times.

    Raises
    ------
    TooFewResolved
        Fewer than ``min_resolved`` records are resolved.
    """
    if isinstance(records, ReturnSample):
        R = records.R.astype(np.int64)
        ok = records.resolved.astype(bool)
        kmax = records.k_max
    else:
        recs = list(records)
        ok = np.array([r.resolved for r in recs], dtype=bool)
        R = np.array([r.R if r.resolved else -1 for r in recs], dtype=np.int64)
        kmax = np.array([r.k_max for r in recs], dtype=np.int64)
    n_ok = int(ok.sum())
    if n_ok < min_resolved:
        raise TooFewResolved(f"{n_ok} resolved records, need {min_resolved}")
    eff = np.where(ok, R, np.iinfo(np.int64).max)
    srt = np.sort(eff)
    ns = np.arange(n_max + 1)
    tail = (len(eff) - np.searchsorted(srt, ns, side="left")) / len(eff)
    seq = TailSequence(tail)
    n_hi = int(min(n_max, np.quantile(R[ok], quantile)))
    n_lo = int(min(p0, n_hi))
    fit = fit_stretched_exponential(seq, n_lo, n_hi)
    ks, cnt = np.unique(kmax, return_counts=True)
    grid = np.unique(np.linspace(max(p0, 1), n_max, 40).astype(int))
    exceed = [(int(n), float(np.mean(kmax >= delta * math.sqrt(n)))) for n in grid]
    return TailReport(seq, fit, {int(k): int(c) for k, c in zip(ks, cnt)}, exceed, n_ok,
                      len(eff) - n_ok, n_lo, n_hi, delta)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float)
