"""Time averages and correlation decay of Lipschitz observables.

Samples of the SRB measure are obtained as ensembles of independent
Lebesgue-random starts run through a burn-in.  Error bars are batch means
over the ensemble.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from ._shards import map_shards
from .core import MapParams, Point, random_points
from .errors import InvalidParameter, NoSignal, TooFewPoints
from .tails import StretchedFit, TailSequence, fit_stretched_exponential


@dataclass(frozen=True)
class Observable:
    """Real function on ``S^1 x I`` evaluated on arrays ``(omega, x)``.

    ``lipschitz_bound`` is declared with respect to
    ``dist = max(circle distance of omega, |x - x'|)``.
    """

    name: str
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_bound: float

    def __call__(self, omega, x) -> np.ndarray:
        omega = np.asarray(omega, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        v = np.asarray(self.func(omega, x), dtype=np.float64)
        return np.array(np.broadcast_to(v, np.broadcast(omega, x).shape))

    def eval(self, p: Point) -> float:
        return float(self(p.omega, p.x))

    def scaled(self, alpha: float) -> "Observable":
        return Observable(f"{alpha!r}*{self.name}", lambda om, x, f=self.func: alpha * f(om, x),
                          abs(alpha) * self.lipschitz_bound)


def dist(p: Point, q: Point) -> float:
    dw = abs(p.omega - q.omega) % 1.0
    return max(min(dw, 1.0 - dw), abs(p.x - q.x))


def x_coordinate() -> Observable:
    return Observable("x", lambda om, x: x, 1.0)


def sin_base() -> Observable:
    return Observable("sin2pi_omega", lambda om, x: np.sin(K.TWO_PI * om), K.TWO_PI)


def constant(c: float) -> Observable:
    return Observable(f"const_{c!r}", lambda om, x: np.full(np.broadcast(om, x).shape, float(c)), 0.0)


BUILTIN = {"x": x_coordinate, "sin": sin_base}


def observable(name: str) -> Observable:
    """Built-in observable by name: ``x``, ``sin`` or ``const:<value>``."""
    if name.startswith("const:"):
        return constant(float(name.split(":", 1)[1]))
    if name not in BUILTIN:
        raise InvalidParameter(f"unknown observable {name!r}")
    return BUILTIN[name]()


# -- estimators -------------------------------------------------------------

def _shifted_mean(v: np.ndarray, axis=None):
    """Mean computed about the first entry, so a constant array averages to itself exactly."""
    c0 = v.reshape(-1)[0]
    return c0 + np.mean(v - c0, axis=axis)


def _batch_stderr(per_batch: np.ndarray) -> float:
    b = len(per_batch)
    if b < 2:
        return 0.0
    m = _shifted_mean(per_batch)
    return float(math.sqrt(np.sum((per_batch - m) ** 2) / (b - 1) / b))


@dataclass
class Average:
    mean: float
    stderr: float
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, **self.meta}


def _ensemble(params: MapParams, rng, size, burn_in):
    words, xs = random_points(params, rng, size)
    K.advance_many(words, xs, int(burn_in), params.a0, params.eps, params.d)
    return words, xs


def birkhoff_average(params: MapParams, obs: Observable, burn_in: int = 1000, n: int = 1000,
                     samples: int = 100, seed: int = 0, *, shards: int = 1, workers: int = 1,
                     block: int = 4096) -> Average:
    """Grand mean of ``n``-step time averages of ``obs`` over ``samples`` orbits.

    ``stderr`` is the standard error of the per-orbit averages (each orbit
    is one batch).
    """
    if n < 1000 or burn_in < 100:
        raise InvalidParameter("birkhoff_average needs n >= 1000 and burn_in >= 100")
    if samples < 1:
        raise InvalidParameter("samples must be >= 1")

    def work(rng, size, _):
        words, xs = _ensemble(params, rng, size, burn_in)
        sums = np.zeros(size)
        shift = None
        done = 0
        while done < n:
            steps = min(block, n - done)
            om, xx = K.trajectory_block(words, xs, steps, params.a0, params.eps, params.d)
            v = obs(om, xx)
            if shift is None:
                shift = v[0, 0] if v.size else 0.0
            sums += np.sum(v - shift, axis=0)
            done += steps
        return shift, sums

    parts = [p for p in map_shards(work, seed, samples, shards, workers) if len(p[1])]
    shift = parts[0][0]
    per_orbit = np.concatenate([shift + (p[0] - shift) + p[1] / n for p in parts])
    mean = float(_shifted_mean(per_orbit))
    return Average(mean, _batch_stderr(per_orbit),
                   {"observable": obs.name, "n": n, "burn_in": burn_in, "samples": samples, "seed": seed})


@dataclass
class Correlation:
    Cn: float
    stderr: float
    n: int


def _covariance(a: np.ndarray, b: np.ndarray, batches: int) -> tuple[float, float]:
    """Centered covariance of paired samples and its batch-means standard error."""
    ca = a - _shifted_mean(a)
    cb = b - _shifted_mean(b)
    cov = float(np.mean(ca * cb))
    m = len(a) - len(a) % batches
    if batches < 2 or m == 0:
        return cov, 0.0
    per = []
    for ia, ib in zip(np.split(a[:m], batches), np.split(b[:m], batches)):
        per.append(np.mean((ia - _shifted_mean(ia)) * (ib - _shifted_mean(ib))))
    return cov, _batch_stderr(np.array(per))


def _lag_values(params, phi, psi, lags, burn_in, samples, seed, shards, workers):
    """``phi`` at the ensemble points and ``psi`` after each of the sorted ``lags``."""
    lags = np.asarray(lags, dtype=np.int64)

    def work(rng, size, _):
        words, xs = _ensemble(params, rng, size, burn_in)
        om0 = (words >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        a = phi(om0, xs)
        out = np.empty((len(lags), size))
        t = 0
        for j, n in enumerate(lags):
            if n > t:
                K.advance_many(words, xs, int(n - t), params.a0, params.eps, params.d)
                t = int(n)
            om = (words >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
            out[j] = psi(om, xs)
        return a, out

    parts = map_shards(work, seed, samples, shards, workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts], axis=1)


def correlation_at(params: MapParams, phi: Observable, psi: Observable, n: int, burn_in: int = 1000,
                   samples: int = 100_000, seed: int = 0, *, shards: int = 1, workers: int = 1,
                   batches: int = 20) -> Correlation:
    """``C_n = E[phi . psi o f^n] - E[phi] E[psi o f^n]`` over an SRB-sampled ensemble."""
    if n < 0:
        raise InvalidParameter("lag must be >= 0")
    a, vals = _lag_values(params, phi, psi, [n], burn_in, samples, seed, shards, workers)
    cov, se = _covariance(a, vals[0], batches)
    return Correlation(cov, se, int(n))


@dataclass
class DecayProfile:
    C: np.ndarray
    stderr: np.ndarray
    fit: StretchedFit | None
    window: list[int]
    meta: dict = field(default_factory=dict)

    @property
    def sequence(self) -> TailSequence:
        return TailSequence(np.abs(self.C))

    @property
    def noise_lag(self) -> int | None:
        """First lag at which ``|C_n|`` is at most ``3 stderr``."""
        below = np.nonzero(np.abs(self.C) <= 3 * self.stderr)[0]
        return int(below[0]) if len(below) else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "Cn", "stderr"])
        for n, (c, s) in enumerate(zip(self.C, self.stderr)):
            w.writerow([n, repr(float(c)), repr(float(s))])
        return buf.getvalue()

    def as_dict(self) -> dict:
        return {"fit": None if self.fit is None else self.fit.as_dict(), "window": self.window,
                "noise_lag": self.noise_lag, **self.meta}


def decay_profile(params: MapParams, phi: Observable, psi: Observable, n_max: int, burn_in: int = 1000,
                  samples: int = 100_000, seed: int = 0, *, shards: int = 1, workers: int = 1,
                  batches: int = 20, min_points: int = 8) -> DecayProfile:
    """``C_n`` for ``n = 0..n_max`` on one shared ensemble, with a fit of the supra-noise part.

    The fit of ``|C_n| ~ C e^(-gamma sqrt n)`` uses only lags where
    ``|C_n| > 3 stderr``; those lags are reported as ``window``.

    Raises
    ------
    NoSignal
        Fewer than ``min_points`` lags are above the noise floor.
    """
    if n_max < 20:
        raise InvalidParameter("decay_profile needs n_max >= 20")
    a, vals = _lag_values(params, phi, psi, np.arange(n_max + 1), burn_in, samples, seed, shards, workers)
    C = np.empty(n_max + 1)
    S = np.empty(n_max + 1)
    for n in range(n_max + 1):
        C[n], S[n] = _covariance(a, vals[n], batches)
    above = np.nonzero(np.abs(C) > 3 * S)[0]
    meta = {"phi": phi.name, "psi": psi.name, "n_max": n_max, "burn_in": burn_in,
            "samples": samples, "seed": seed, "shards": shards, "batches": batches}
    if len(above) < min_points:
        raise NoSignal(f"only {len(above)} lags above 3 stderr")
    try:
        fit = fit_stretched_exponential(np.abs(C[above]), int(above[0]), int(above[-1]), index=above)
    except TooFewPoints as exc:  # pragma: no cover - guarded by the count above
        raise NoSignal(str(exc)) from exc
    return DecayProfile(C, S, fit, [int(n) for n in above], meta)
