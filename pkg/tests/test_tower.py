import numpy as np
import pytest

from viana import _kernels as K
from viana.core import Point, orbit
from viana.errors import BudgetExceeded, InvalidParameter, NotFullBase, PreconditionTooThin, TooFewResolved
from viana.partition import (
    AdmissibleCurve,
    Neg,
    Pos,
    Rectangle,
    interval_of,
    is_gentle,
    left_side,
    level,
)
from viana.returns import ReturnConfig, first_hyperbolic_return
from viana.tower import (
    ReturnRecord,
    StripTarget,
    build_return_model,
    canonical_rectangles,
    grow_to_fixed_size,
    random_gentle_rectangle,
    return_process_reference,
    return_tail_report,
    simulate_return_process,
)


@pytest.fixture(scope="module")
def cfg(params):
    return ReturnConfig.for_eps(params.eps)


@pytest.fixture(scope="module")
def model(params):
    return build_return_model(params, 400, seed=0)


@pytest.fixture(scope="module")
def sample(params, cfg, model):
    return simulate_return_process(params, cfg, 4000, 600, seed=1, model=model)


def _check_growth(params, g):
    assert g.conservation_error <= 1e-6
    for q in g.pending:
        assert is_gentle(q.rect, params), q.clause
    for q in g.returned:
        lam = interval_of(Pos(1) if q.clause == "+" else Neg(1), params.eps)
        np.testing.assert_allclose(left_side(q.rect, params), lam, rtol=1e-12)
    us = [q.u for q in g.pieces]
    assert us[0][0] == pytest.approx(0.0, abs=1e-12) and us[-1][1] == pytest.approx(1.0, abs=1e-12)
    for a, b in zip(us, us[1:]):
        assert a[1] == pytest.approx(b[0], abs=1e-12)


class TestTarget:
    def test_strips(self, params):
        assert StripTarget.for_sign(1, params.eps).interval == interval_of(Pos(1), params.eps)
        assert StripTarget.for_sign(-1, params.eps).interval == interval_of(Neg(1), params.eps)
        with pytest.raises(InvalidParameter):
            StripTarget.for_sign(0, params.eps)


class TestGrowth:
    def test_canonical_rectangles(self, params, model):
        rects = canonical_rectangles(params)
        assert len(rects) == 8
        eps = params.eps ** 0.85
        for lo, hi in rects:
            assert hi - lo >= eps
            assert is_gentle(Rectangle.flat(lo, hi), params)
        for g in model.growth:
            _check_growth(params, g)
            assert g.returned and g.returned_mass > 0
            assert not g.unresolved

    def test_random_gentle_rectangles(self, params):
        rng = np.random.default_rng(8)
        for i in range(20):
            r = random_gentle_rectangle(params, rng)
            assert is_gentle(r, params)
            _check_growth(params, grow_to_fixed_size(params, r, 400, seed=i))

    def test_immediate_three_way_split(self, params):
        se, lam = params.sqrt_eps, level(1, params.eps)
        lo, hi = -0.01, 0.5
        g = grow_to_fixed_size(params, Rectangle.flat(lo, hi), 400)
        ret = [q for q in g.returned if q.time == 0]
        assert len(ret) == 1
        # with no iterates the mass fraction is the height fraction
        assert ret[0].mass / g.input_mass == pytest.approx((se - lam) / (hi - lo), rel=1e-12)
        assert ret[0].u == pytest.approx(((lam - lo) / (hi - lo), (se - lo) / (hi - lo)), rel=1e-12)
        far = [q for q in g.pending if q.time == 0 and q.clause == "collar+"]
        assert len(far) == 1 and far[0].u[0] == pytest.approx(ret[0].u[1], rel=1e-12)

    def test_budget_exceeded_carries_result(self, params):
        lo, hi = canonical_rectangles(params)[0]
        with pytest.raises(BudgetExceeded) as info:
            grow_to_fixed_size(params, Rectangle.flat(lo, hi), 0)
        res = info.value.result
        assert res is not None and res.unresolved_mass == pytest.approx(1.0)
        res2 = grow_to_fixed_size(params, Rectangle.flat(lo, hi), 0, raise_on_budget=False)
        assert res2.summary() == res.summary()

    def test_preconditions(self, params):
        with pytest.raises(PreconditionTooThin):
            grow_to_fixed_size(params, Rectangle.flat(0.1, 0.1 + 1e-4), 400)
        with pytest.raises(NotFullBase):
            grow_to_fixed_size(params, Rectangle.flat(0.1, 0.3, (0.0, 0.5)), 400)
        with pytest.raises(InvalidParameter):
            steep = AdmissibleCurve.affine(0.1, 2 * params.eps)
            grow_to_fixed_size(params, Rectangle((0.0, 1.0), steep, AdmissibleCurve.constant(0.4)), 400)

    def test_deterministic(self, params):
        lo, hi = canonical_rectangles(params)[3]
        a = grow_to_fixed_size(params, Rectangle.flat(lo, hi), 400, seed=4)
        b = grow_to_fixed_size(params, Rectangle.flat(lo, hi), 400, seed=4)
        assert a.to_dict(params) == b.to_dict(params)

    def test_locate(self, params, model):
        g = model.growth[0]
        for q in g.pieces:
            assert g.locate(0.5 * (q.u[0] + q.u[1])) is q
        lo, hi = model.rects[0]
        t, code = model.locate(0.5 * (lo + hi), params.sqrt_eps)
        assert code in (0, 1, 2, 3) and t >= 0


class TestReference:
    def test_stub_returns_after_first_round(self):
        p0 = 50
        for t_stub in (0, 3, 17):
            rec = return_process_reference(Point(0.1, 0.1), 1000, p0,
                                           first_return=lambda pt, limit: (p0, pt),
                                           locate=lambda pt, t=t_stub: (t, 0),
                                           advance=lambda pt, t: pt)
            assert rec == ReturnRecord((p0 + t_stub,), 0, p0 + t_stub, True)

    def test_stub_pending_rounds(self):
        p0 = 10
        calls = iter([(5, 1), (2, 1), (4, 0)])
        rec = return_process_reference(Point(0.1, 0.1), 1000, p0, lambda pt, limit: (p0, pt),
                                       lambda pt: next(calls), lambda pt, t: pt)
        assert rec.stopping_times == (15, 27, 41) and rec.k_max == 2 and rec.R == 41

    def test_stub_runs_out(self):
        rec = return_process_reference(Point(0.1, 0.1), 25, 10, lambda pt, limit: (10, pt),
                                       lambda pt: (3, 1), lambda pt, t: pt)
        # the last round may start before n_max and end after it
        assert not rec.resolved and rec.R is None and rec.stopping_times == (13, 26)


class TestSimulation:
    def test_records(self, cfg, sample):
        assert len(sample) == 4000
        assert sample.resolved.any()
        for rec in sample:
            T = rec.stopping_times
            if T:
                assert T[0] >= cfg.p0
                assert all(b > a for a, b in zip(T, T[1:]))
            if rec.resolved:
                assert rec.R == T[-1] and rec.R <= 600 + sample.meta["q"]
                assert rec.k_max == len(T) - 1

    def test_kernel_matches_reference(self, params, cfg, model):
        rng = np.random.default_rng(17)
        lam = interval_of(Pos(1), params.eps)
        words = rng.integers(0, 2 ** 63, 300, dtype=np.uint64)
        xs = rng.uniform(lam[0], lam[1], 300) * rng.choice([-1.0, 1.0], 300)
        frac = cfg.c_prime_ratio
        n_max = 500
        stops, counts, R, resolved, _ = K.return_process(
            words, xs, n_max, cfg.p0, cfg.min_deep, frac.numerator, frac.denominator, params.a0, params.eps,
            params.d, params.sqrt_eps, model.lo, model.hi, model.off, model.edges, model.times, model.codes,
            n_max // cfg.p0 + 1)

        def first_return(pt, limit):
            n = first_hyperbolic_return(params, pt, cfg, limit)
            return None if n is None else (n, orbit(params, pt, n).end)

        for i in range(300):
            ref = return_process_reference(
                Point(0.0, float(xs[i]), word=int(words[i])), n_max, cfg.p0, first_return,
                lambda pt: model.locate(pt.x, params.sqrt_eps), lambda pt, t: orbit(params, pt, t).end if t else pt)
            assert tuple(int(t) for t in stops[i, :counts[i]]) == ref.stopping_times
            assert bool(resolved[i]) == ref.resolved
            assert (int(R[i]) if resolved[i] else None) == ref.R

    def test_csv(self, sample):
        lines = sample.to_csv().splitlines()
        assert lines[0].startswith("id,T_0") and lines[0].endswith("k_max,R,resolved")
        assert len(lines) == len(sample) + 1

    def test_deterministic(self, params, cfg, model):
        a = simulate_return_process(params, cfg, 2000, 300, seed=3, model=model, shards=3, workers=1)
        b = simulate_return_process(params, cfg, 2000, 300, seed=3, model=model, shards=3, workers=3)
        assert a.to_csv() == b.to_csv()

    def test_arguments(self, params, cfg, model):
        with pytest.raises(InvalidParameter):
            simulate_return_process(params, cfg, 999, 300, model=model)
        with pytest.raises(InvalidParameter):
            simulate_return_process(params, cfg, 1000, cfg.p0 - 1, model=model)


class TestTailReport:
    def test_step_function(self):
        recs = [ReturnRecord((12,), 0, 12, True)] * 1000
        rep = return_tail_report(recs, 20, 1)
        assert list(rep.tail.values[:13]) == [1.0] * 13
        assert not rep.tail.values[13:].any()
        assert rep.n_hi == 12 and rep.fit.gamma == pytest.approx(0.0, abs=1e-12)
        assert rep.kmax_hist == {0: 1000}
        assert rep.tail_csv().splitlines()[0] == "n,fraction"

    def test_unresolved_count_as_long(self):
        recs = [ReturnRecord((12,), 0, 12, True)] * 1000 + [ReturnRecord((), 0, None, False)] * 500
        rep = return_tail_report(recs, 20, 1)
        assert rep.tail.values[-1] == pytest.approx(1 / 3)
        assert rep.unresolved == 500

    def test_monotone_on_sample(self, cfg, sample):
        rep = return_tail_report(sample, 600, cfg.p0, min_resolved=10)
        v = rep.tail.values
        assert v[0] == 1.0 and np.all(np.diff(v) <= 0)
        assert all(0.0 <= f <= 1.0 for _, f in rep.kmax_exceed)

    def test_too_few_resolved(self):
        with pytest.raises(TooFewResolved):
            return_tail_report([ReturnRecord((7,), 0, 7, True)] * 999, 20, 1)
