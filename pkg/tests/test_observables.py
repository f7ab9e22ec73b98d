import math

import numpy as np
import pytest

from viana.core import Point, orbit, random_points
from viana.errors import InvalidParameter, NoSignal
from viana.observables import (
    Observable,
    birkhoff_average,
    constant,
    correlation_at,
    decay_profile,
    dist,
    observable,
    sin_base,
    x_coordinate,
)
from viana.observables import _covariance


def _sum(f, g):
    return Observable(f"{f.name}+{g.name}", lambda om, x: f(om, x) + g(om, x),
                      f.lipschitz_bound + g.lipschitz_bound)


class TestObservables:
    def test_builtin_names(self):
        assert observable("x").name == "x"
        assert observable("sin").name == "sin2pi_omega"
        assert observable("const:2.5")(0.3, 0.1) == 2.5
        with pytest.raises(InvalidParameter):
            observable("cos")

    def test_broadcast(self):
        v = x_coordinate()(np.zeros(5), 0.25)
        assert v.shape == (5,) and np.all(v == 0.25)
        assert constant(1.0)(np.zeros((2, 3)), np.zeros((2, 3))).shape == (2, 3)

    def test_dist(self):
        assert dist(Point(0.95, 0.0), Point(0.05, 0.0)) == pytest.approx(0.1)
        assert dist(Point(0.1, 0.3), Point(0.1, -0.2)) == pytest.approx(0.5)

    @pytest.mark.parametrize("obs", [x_coordinate(), sin_base(), constant(3.0), sin_base().scaled(-2.0)])
    def test_lipschitz_bounds(self, obs, rng):
        for _ in range(2000):
            p = Point(rng.uniform(), rng.uniform(-0.8, 1.5))
            q = Point((p.omega + rng.normal(0, 1e-2)) % 1.0, p.x + rng.normal(0, 1e-2))
            assert abs(obs.eval(p) - obs.eval(q)) <= obs.lipschitz_bound * dist(p, q) * (1 + 1e-9) + 1e-15


class TestBirkhoff:
    def test_constant_is_exact(self, params):
        avg = birkhoff_average(params, constant(0.1), burn_in=100, n=1000, samples=50, seed=1)
        assert avg.mean == 0.1 and avg.stderr == 0.0

    def test_sin_mean_vanishes(self, params):
        # the base marginal of the invariant measure is Lebesgue
        avg = birkhoff_average(params, sin_base(), burn_in=100, n=2000, samples=100, seed=2)
        assert abs(avg.mean) <= 3 * avg.stderr + 1e-12

    def test_against_plain_orbits(self, params):
        avg = birkhoff_average(params, x_coordinate(), burn_in=1000, n=5000, samples=200, seed=3)
        rng = np.random.default_rng(99)
        words, xs = random_points(params, rng, 200)
        means = []
        for w, x in zip(words, xs):
            rec = orbit(params, Point(0.0, float(x), word=int(w)), 6000)
            means.append(np.mean(rec.xs[1001:6001]))
        oracle = float(np.mean(means))
        se = float(np.std(means, ddof=1) / math.sqrt(len(means)))
        assert abs(avg.mean - oracle) <= 4 * math.hypot(avg.stderr, se)

    def test_shards_deterministic(self, params):
        a = birkhoff_average(params, x_coordinate(), burn_in=100, n=1000, samples=40, seed=4, shards=4)
        b = birkhoff_average(params, x_coordinate(), burn_in=100, n=1000, samples=40, seed=4, shards=4,
                             workers=4)
        assert a.mean == b.mean and a.stderr == b.stderr

    def test_arguments(self, params):
        with pytest.raises(InvalidParameter):
            birkhoff_average(params, x_coordinate(), n=999)
        with pytest.raises(InvalidParameter):
            birkhoff_average(params, x_coordinate(), samples=0)


class TestCorrelation:
    def test_covariance_matches_numpy(self, rng):
        a = rng.normal(size=1000)
        b = 0.5 * a + rng.normal(size=1000)
        cov, se = _covariance(a, b, 20)
        assert cov == pytest.approx(np.cov(a, b, bias=True)[0, 1], rel=1e-12)
        assert se > 0

    def test_constant_gives_zero(self, params):
        c = correlation_at(params, constant(2.0), x_coordinate(), 5, burn_in=100, samples=5000, seed=1)
        assert c.Cn == 0.0 and c.stderr == 0.0
        with pytest.raises(NoSignal):
            decay_profile(params, constant(2.0), x_coordinate(), 20, burn_in=100, samples=5000, seed=1)

    def test_lag_zero_is_variance(self, params):
        c = correlation_at(params, x_coordinate(), x_coordinate(), 0, burn_in=500, samples=20000, seed=5)
        assert c.Cn > 0.1

    def test_profile_matches_single_lags(self, params):
        prof = decay_profile(params, x_coordinate(), x_coordinate(), 20, burn_in=200, samples=20000, seed=6)
        for n in (0, 1, 7, 20):
            c = correlation_at(params, x_coordinate(), x_coordinate(), n, burn_in=200, samples=20000, seed=6)
            assert c.Cn == prof.C[n] and c.stderr == prof.stderr[n]
        assert prof.to_csv().splitlines()[0] == "n,Cn,stderr"
        assert prof.window and all(abs(prof.C[n]) > 3 * prof.stderr[n] for n in prof.window)

    def test_bilinear(self, params):
        kw = dict(burn_in=200, samples=20000, seed=7)
        x, s = x_coordinate(), sin_base()
        base = correlation_at(params, x, x, 3, **kw).Cn
        assert correlation_at(params, x.scaled(-2.5), x, 3, **kw).Cn == pytest.approx(-2.5 * base, rel=1e-10)
        both = correlation_at(params, _sum(x, s), x, 3, **kw).Cn
        assert both == pytest.approx(base + correlation_at(params, s, x, 3, **kw).Cn, rel=1e-9, abs=1e-14)

    def test_shards_deterministic(self, params):
        kw = dict(burn_in=200, samples=10000, seed=8, shards=5)
        a = correlation_at(params, x_coordinate(), x_coordinate(), 4, **kw)
        b = correlation_at(params, x_coordinate(), x_coordinate(), 4, workers=5, **kw)
        assert a == b

    def test_arguments(self, params):
        with pytest.raises(InvalidParameter):
            correlation_at(params, x_coordinate(), x_coordinate(), -1)
        with pytest.raises(InvalidParameter):
            decay_profile(params, x_coordinate(), x_coordinate(), 19)
