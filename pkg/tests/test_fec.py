import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mbcast.fec import (
    DomainError,
    ErasureChannel,
    RaptorCode,
    code_for_segment,
    decoder_failure_given_n,
    segment_loss_probability,
    symbols_received_distribution,
    symbols_received_pmf,
)

from oracles import brute_force_loss, exact_pmf


class TestTypes:
    @pytest.mark.parametrize("kwargs", [dict(k=0), dict(k=1, r=-1), dict(k=1, symbol_size=0), dict(k=1.5)])
    def test_invalid_code(self, kwargs):
        with pytest.raises(DomainError):
            RaptorCode(**kwargs)

    @pytest.mark.parametrize("per", [-0.01, 1.01])
    def test_invalid_channel(self, per):
        with pytest.raises(DomainError):
            ErasureChannel(per)

    def test_code_rate(self):
        assert RaptorCode(k=10, r=4).code_rate == pytest.approx(10 / 14)
        assert RaptorCode(k=3).code_rate == 1.0


class TestDecoderFailure:
    code = RaptorCode(k=10, r=4)

    def test_below_k(self):
        assert decoder_failure_given_n(self.code, 9) == 1.0
        assert decoder_failure_given_n(self.code, 0) == 1.0

    def test_at_k(self):
        assert decoder_failure_given_n(self.code, 10) == pytest.approx(0.85, abs=1e-12)

    def test_two_extra(self):
        assert decoder_failure_given_n(self.code, 12) == pytest.approx(0.27326565, abs=1e-9)

    @pytest.mark.parametrize("n", [-1, 15])
    def test_out_of_range(self, n):
        with pytest.raises(DomainError):
            decoder_failure_given_n(self.code, n)


class TestPmf:
    def test_lossless(self):
        assert symbols_received_pmf(RaptorCode(2, 1), ErasureChannel(0.0), 3) == 1.0

    def test_all_lost(self):
        assert symbols_received_pmf(RaptorCode(2, 1), ErasureChannel(1.0), 0) == 1.0

    def test_half(self):
        assert symbols_received_pmf(RaptorCode(2, 1), ErasureChannel(0.5), 2) == pytest.approx(0.375, abs=1e-15)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            symbols_received_pmf(RaptorCode(2, 1), ErasureChannel(0.5), 4)

    @pytest.mark.parametrize("k,r,per", [(5, 3, 0.1), (20, 7, 0.37), (1, 0, 0.9)])
    def test_matches_exact_rational(self, k, r, per):
        code, ch = RaptorCode(k, r), ErasureChannel(per)
        for n in range(k + r + 1):
            assert symbols_received_pmf(code, ch, n) == pytest.approx(exact_pmf(k + r, n, per), rel=1e-11, abs=1e-300)

    @settings(max_examples=60, deadline=None)
    @given(k=st.integers(1, 300), r=st.integers(0, 300), per=st.floats(0, 1))
    def test_normalized(self, k, r, per):
        pmf = symbols_received_distribution(RaptorCode(k, r), ErasureChannel(per))
        assert abs(pmf.sum() - 1.0) <= 1e-12

    def test_large_block_is_finite(self):
        code = RaptorCode(k=80_000, r=20_000)
        pmf = symbols_received_distribution(code, ErasureChannel(0.2))
        assert np.all(np.isfinite(pmf))
        assert abs(pmf.sum() - 1.0) <= 1e-12
        assert symbols_received_pmf(code, ErasureChannel(0.2), 80_000) == pytest.approx(pmf[80_000], rel=1e-9)

    def test_scalar_and_vector_agree(self):
        code, ch = RaptorCode(12, 5), ErasureChannel(0.27)
        pmf = symbols_received_distribution(code, ch)
        for n in range(code.n_symbols + 1):
            assert symbols_received_pmf(code, ch, n) == pytest.approx(pmf[n], rel=1e-12)


class TestSegmentLoss:
    def test_all_lost(self):
        assert segment_loss_probability(RaptorCode(10, 4), ErasureChannel(1.0)) == 1.0

    def test_lossless_keeps_decoder_floor(self):
        assert segment_loss_probability(RaptorCode(10, 4), ErasureChannel(0.0)) == pytest.approx(0.85 * 0.567**4, abs=1e-15)

    def test_frozen_small_case(self):
        # brute force over n = 0..3, computed before the implementation
        assert segment_loss_probability(RaptorCode(2, 1), ErasureChannel(0.5)) == pytest.approx(0.87899375, abs=1e-12)

    @pytest.mark.parametrize(
        "k,r,per,expected",
        [(10, 2, 0.1, 0.5651460936494657), (4, 4, 0.3, 0.4128631792568284)],
    )
    def test_frozen_enumeration_values(self, k, r, per, expected):
        assert segment_loss_probability(RaptorCode(k, r), ErasureChannel(per)) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("per", [0.1, 0.3, 0.5])
    def test_matches_enumeration(self, per):
        for total in range(1, 11):
            for k in range(1, total + 1):
                got = segment_loss_probability(RaptorCode(k, total - k), ErasureChannel(per))
                assert abs(got - brute_force_loss(k, total - k, per)) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(k=st.integers(1, 60), r=st.integers(0, 40), per=st.floats(0.0, 1.0))
    def test_non_increasing_in_redundancy(self, k, r, per):
        ch = ErasureChannel(per)
        assert segment_loss_probability(RaptorCode(k, r + 1), ch) <= segment_loss_probability(RaptorCode(k, r), ch) + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(k=st.integers(1, 60), r=st.integers(0, 40), a=st.floats(0, 1), b=st.floats(0, 1))
    def test_non_decreasing_in_per(self, k, r, a, b):
        lo, hi = sorted((a, b))
        code = RaptorCode(k, r)
        assert segment_loss_probability(code, ErasureChannel(lo)) <= segment_loss_probability(code, ErasureChannel(hi)) + 1e-12

    @pytest.mark.parametrize(
        "small,large",
        [((1, 1), (2, 2)), ((2, 2), (4, 4)), ((3, 3), (6, 6)), ((2, 1), (4, 2)), ((4, 2), (8, 4)), ((3, 1), (6, 2)), ((4, 1), (8, 2))],
    )
    @pytest.mark.parametrize("per", [0.05, 0.1, 0.15])
    def test_block_size_against_oracle(self, small, large, per):
        # same realized rate, both small enough to enumerate exhaustively
        p_small = brute_force_loss(*small, per)
        p_large = brute_force_loss(*large, per)
        assert p_large <= p_small + 1e-12
        assert segment_loss_probability(RaptorCode(*large), ErasureChannel(per)) == pytest.approx(p_large, abs=1e-10)

    def test_block_size_effect_reverses_when_channel_is_worse_than_code(self):
        # fewer expected arrivals than k: bigger blocks concentrate on failure
        assert brute_force_loss(4, 4, 0.6) > brute_force_loss(2, 2, 0.6)


class TestCodeForSegment:
    def test_rate_one(self):
        assert code_for_segment(2048, 1024, 1.0) == RaptorCode(2, 0, 1024)

    def test_half_rate(self):
        assert code_for_segment(2048, 1024, 0.5) == RaptorCode(2, 2, 1024)

    def test_rounding(self):
        assert code_for_segment(10240, 1024, 0.84) == RaptorCode(10, 2, 1024)

    def test_no_spurious_extra_symbol(self):
        # 9 / 0.9 evaluates to 10.000000000000002 in floating point
        assert code_for_segment(9 * 1024, 1024, 0.9) == RaptorCode(9, 1, 1024)

    @pytest.mark.parametrize("rate", [0.0, -0.1, 1.01])
    def test_bad_rate(self, rate):
        with pytest.raises(DomainError):
            code_for_segment(1024, 1024, rate)

    @settings(max_examples=200)
    @given(size=st.integers(1, 10**7), sym=st.integers(1, 4096), rate=st.floats(0.05, 1.0))
    def test_realized_rate_never_exceeds_request(self, size, sym, rate):
        code = code_for_segment(size, sym, rate)
        assert code.k == math.ceil(size / sym)
        assert code.code_rate <= rate + 1e-12
        # minimal: one fewer repair symbol would exceed the request
        if code.r > 0:
            assert code.k / (code.n_symbols - 1) > rate - 1e-12
