import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_sequences, brute_return, exhaustive_mismatches
from viana import _kernels as K
from viana.core import Point, make_params, orbit, random_points
from viana.errors import InsufficientSegments, InvalidParameter
from viana.returns import (
    ReturnConfig,
    calibrate_c,
    deep_indices,
    first_hyperbolic_return,
    first_hyperbolic_returns,
    hyperbolic_tail,
    is_hyperbolic_return,
    return_flags,
    verify_expansion_lemmas,
)

THRESH2 = ReturnConfig(0.1, 0.10, 0.11, 1, 2.0)


@pytest.fixture(scope="module")
def cfg(params):
    return ReturnConfig.for_eps(params.eps)


class TestConfig:
    def test_threshold(self):
        cfg = ReturnConfig.for_eps(1e-3, 0.1)
        assert cfg.depth_threshold == pytest.approx(0.3 * math.log(1000), rel=1e-15)
        assert cfg.depth_threshold == pytest.approx(2.0723, abs=1e-4)
        assert cfg.min_deep == 3

    @pytest.mark.parametrize("kw", [dict(eta=0.34), dict(eta=0.0), dict(c=0.2, c_prime=0.1),
                                    dict(c=0.0), dict(p0=0)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidParameter):
            ReturnConfig.for_eps(1e-3, **kw)

    def test_rational_c_prime(self):
        assert ReturnConfig.for_eps(1e-3).c_prime_ratio == pytest.approx(0.11)
        assert ReturnConfig.for_eps(1e-3).c_prime_ratio.denominator == 100


class TestDetector:
    def test_deep_indices_example(self):
        cfg = ReturnConfig.for_eps(1e-3, 0.1)
        assert deep_indices([0, 1, 3, 2, 5], 5, cfg) == {2, 4}
        assert deep_indices([0] * 10, 9, cfg) == set()

    @given(st.lists(st.integers(0, 8), min_size=2, max_size=40))
    def test_deep_indices_range(self, r):
        n = len(r) - 1
        assert deep_indices(r, n, THRESH2) <= set(range(1, n))

    def test_shallow_at_n(self):
        assert not is_hyperbolic_return([0, 0, 0, 0, 0], 4, THRESH2)

    def test_no_deep_and_in_strip(self):
        assert is_hyperbolic_return([0, 0, 0, 0, 1], 4, THRESH2)

    def test_heavy_deep_term(self):
        T = 3
        assert T >= THRESH2.depth_threshold and T > 0.11 * 3
        assert not is_hyperbolic_return([0, 0, T, 0, 1], 4, THRESH2)
        assert not brute_return(np.array([0, 0, T, 0, 1]), 4, 2, 11, 100)

    def test_flags_all_ones_returns_at_p0(self):
        cfg = ReturnConfig(0.1, 0.1, 0.11, 7, 2.0)
        f = return_flags(np.ones(30, dtype=np.int64), cfg)
        assert not f[0] and f[1:].all()
        assert int(np.nonzero(f[cfg.p0:])[0][0]) + cfg.p0 == cfg.p0

    def test_python_detector_exhaustive_short(self):
        outcomes = set()
        for L in range(2, 9):
            for seq in all_sequences(L):
                r = np.array(seq, dtype=np.int64)
                n = L - 1
                got = is_hyperbolic_return(r, n, THRESH2)
                assert got == brute_return(r, n, 2, 11, 100), seq
                outcomes.add(got)
        assert outcomes == {True, False}

    def test_kernel_exhaustive_length_9(self):
        seqs, decisions, bad = exhaustive_mismatches(K.return_flags, 9, 2, 11, 100)
        assert seqs == 4 ** 9 and decisions == 8 * 4 ** 9 and bad == 0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 12), min_size=2, max_size=60), st.data())
    def test_shrinking_depths_keeps_returns(self, r, data):
        r = np.array(r, dtype=np.int64)
        n = len(r) - 1
        if not is_hyperbolic_return(r, n, THRESH2):
            return
        i = data.draw(st.integers(0, n - 1))
        r2 = r.copy()
        r2[i] = data.draw(st.integers(0, int(r[i])))
        assert is_hyperbolic_return(r2, n, THRESH2)
        assert sum(r[j] for j in deep_indices(r, n, THRESH2)) <= 0.11 * n

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 12), min_size=2, max_size=60))
    def test_flags_agree_with_suffix_sums(self, r):
        r = np.array(r, dtype=np.int64)
        f = return_flags(r, THRESH2)
        assert [bool(f[n]) for n in range(1, len(r))] == \
            [is_hyperbolic_return(r, n, THRESH2) for n in range(1, len(r))]

    def test_detector_arguments(self):
        with pytest.raises(InvalidParameter):
            is_hyperbolic_return([0, 1], 2, THRESH2)
        with pytest.raises(InvalidParameter):
            deep_indices([0, 1], 3, THRESH2)


class TestFirstReturn:
    def test_against_brute_force(self, params, cfg):
        rng = np.random.default_rng(11)
        words, xs = random_points(params, rng, 1000)
        got = first_hyperbolic_returns(params, words, xs, cfg, 200)
        frac = cfg.c_prime_ratio
        for w, x, g in zip(words, xs, got):
            rec = orbit(params, Point(0.0, float(x), word=int(w)), 200)
            r = rec.depths
            if np.any(r < 0):
                assert g == K.SENTINEL
                continue
            expect = next((n for n in range(cfg.p0, 201)
                           if brute_return(r, n, cfg.min_deep, frac.numerator, frac.denominator)), None)
            assert (None if g < 0 else int(g)) == expect
        assert np.any(got >= 0) and np.any(got == K.NONE)

    def test_single_point_wrapper(self, params, cfg):
        p = Point(0.3, 0.02)
        n = first_hyperbolic_return(params, p, cfg, 400)
        arr = first_hyperbolic_returns(params, np.array([p.word], dtype=np.uint64), np.array([p.x]), cfg, 400)
        assert (n if n is not None else K.NONE) == int(arr[0])

    def test_sentinel_is_none(self, params, cfg):
        assert first_hyperbolic_return(params, Point(0.5, 0.0), cfg, 100) is None

    def test_n_max_below_p0(self, params, cfg):
        with pytest.raises(InvalidParameter):
            first_hyperbolic_return(params, Point(0.5, 0.1), cfg, cfg.p0 - 1)


class TestTail:
    def test_small_run(self, params, cfg):
        tail = hyperbolic_tail(params, cfg, 150, 5000, seed=3)
        f = tail.fraction
        assert tail.n[0] == cfg.p0 and tail.n[-1] == 150
        assert f[0] <= 1.0 and np.all(np.diff(f) <= 0)
        header = tail.to_csv().splitlines()[0]
        assert header == "n,survivors,fraction,sqrt_n,log_fraction"
        again = hyperbolic_tail(params, cfg, 150, 5000, seed=3)
        assert again.to_csv() == tail.to_csv()

    def test_shards_deterministic(self, params, cfg):
        a = hyperbolic_tail(params, cfg, 120, 4000, seed=5, shards=4, workers=1)
        b = hyperbolic_tail(params, cfg, 120, 4000, seed=5, shards=4, workers=4)
        assert a.to_csv() == b.to_csv()

    def test_too_few_samples(self, params, cfg):
        with pytest.raises(InvalidParameter):
            hyperbolic_tail(params, cfg, 150, 999)


class TestCalibration:
    def test_scan_records_table(self, params):
        cal = calibrate_c(params, grid=[0.05, 0.1, 0.2], samples=2000, seed=1)
        assert [c for c, _ in cal.table][: len(cal.table)] == [0.05, 0.1, 0.2][: len(cal.table)]
        assert all(0.0 <= s <= 1.0 for _, s in cal.table)
        cfg = cal.config(params)
        assert cfg.c < cfg.c_prime

    def test_low_target_picks_first(self, params):
        cal = calibrate_c(params, grid=[0.05, 0.1], samples=2000, seed=1, target=0.0)
        assert cal.c == 0.05 and cal.c_prime == pytest.approx(0.055)


class TestExpansionLemmas:
    def test_report(self, params, cfg):
        rep = verify_expansion_lemmas(params, cfg, samples=2000, seed=2)
        assert rep.N_eps >= 1
        assert rep.min_ratio_near >= 1.0
        assert rep.sigma2_hat > 1.0
        assert rep.C2_hat > 0 and rep.C2_terminal > 0
        assert rep.terminal_segments >= 100
        d = rep.as_dict()
        assert d["success"] == (rep.stay_out_ok and rep.min_ratio_near >= 1 and rep.sigma2_hat > 1)

    def test_insufficient_segments(self, cfg):
        p = make_params(1.5436890126920761, 1e-12, 16)
        tiny = ReturnConfig.for_eps(1e-12)
        with pytest.raises(InsufficientSegments):
            verify_expansion_lemmas(p, tiny, samples=1000, seed=0, k_max=10)

    def test_too_few_samples(self, params, cfg):
        with pytest.raises(InvalidParameter):
            verify_expansion_lemmas(params, cfg, samples=10)
