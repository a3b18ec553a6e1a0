import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mbcast.fec import ErasureChannel, RaptorCode, code_for_segment, symbols_received_distribution
from mbcast.flute import (
    HEADER,
    FdtInstance,
    FramingError,
    LoopbackTransport,
    SourceBlockPlan,
    SymbolPacket,
    adjudicate_decode,
    adjudicate_decode_many,
    apply_channel,
    build_fdt,
    packetize,
)


class TestFdt:
    def test_exact_division(self):
        fdt = build_fdt(1, "seg-1.m4s", 2048, code_for_segment(2048, 1024, 1.0))
        assert fdt.k == 2

    def test_ceiling(self):
        fdt = build_fdt(2, "seg-2.m4s", 2049, code_for_segment(2049, 1024, 1.0))
        assert fdt.k == 3

    def test_mismatched_k(self):
        with pytest.raises(FramingError):
            build_fdt(1, "seg", 2049, RaptorCode(2, 0, 1024))

    def test_round_trip(self):
        fdt = build_fdt(7, "live/seg-7.m4s", 123456, code_for_segment(123456, 1024, 0.8), instance_id=42)
        assert FdtInstance.parse(fdt.serialize()) == fdt

    def test_wire_text(self):
        fdt = build_fdt(1, "a", 10, RaptorCode(1, 0, 1024))
        assert fdt.serialize() == b"toi=1\ncontent-location=a\ncontent-length=10\nk=1\nsymbol-size=1024\ninstance-id=1\n"

    @pytest.mark.parametrize(
        "blob",
        [b"toi=1\n", b"garbage", b"\xff\xfe", b"toi=x\ncontent-location=a\ncontent-length=1\nk=1\nsymbol-size=1\ninstance-id=0\n"],
    )
    def test_parse_rejects(self, blob):
        with pytest.raises(FramingError):
            FdtInstance.parse(blob)

    @given(
        toi=st.integers(1, 2**32 - 1),
        location=st.text(st.characters(blacklist_characters="\r\n", blacklist_categories=("Cs",)), max_size=40),
        length=st.integers(1, 10**9),
        sym=st.integers(1, 65535),
        instance=st.integers(0, 2**32 - 1),
    )
    def test_round_trip_property(self, toi, location, length, sym, instance):
        fdt = FdtInstance(toi, location, length, -(-length // sym), sym, instance)
        assert FdtInstance.parse(fdt.serialize()) == fdt


class TestSymbolPacket:
    def test_header_layout(self):
        data = SymbolPacket(toi=0x01020304, esi=5, payload_len=3).serialize()
        assert data[:2] == b"\x46\x4c"
        assert data[2] == 1
        assert data[3:7] == b"\x01\x02\x03\x04"
        assert data[7:11] == b"\x00\x00\x00\x05"
        assert data[11:13] == b"\x00\x03"
        assert len(data) == HEADER.size + 3 == 16

    @given(toi=st.integers(0, 2**32 - 1), esi=st.integers(0, 2**32 - 1), n=st.integers(0, 2000))
    def test_round_trip(self, toi, esi, n):
        pkt = SymbolPacket(toi, esi, n)
        assert SymbolPacket.parse(pkt.serialize()) == pkt

    @pytest.mark.parametrize(
        "blob",
        [b"\x46\x4c\x01", b"\x00\x00\x01" + bytes(10), b"\x46\x4c\x02" + bytes(10), b"\x46\x4c\x01" + bytes(9) + b"\x05"],
    )
    def test_parse_rejects(self, blob):
        with pytest.raises(FramingError):
            SymbolPacket.parse(blob)


class TestPacketize:
    def test_source_only(self):
        pkts = packetize(SourceBlockPlan(1, RaptorCode(2, 0)))
        assert [p.role(2) for p in pkts] == ["source", "source"]

    def test_source_and_repair(self):
        pkts = packetize(SourceBlockPlan(1, RaptorCode(2, 2)))
        assert [p.esi for p in pkts] == [0, 1, 2, 3]
        assert [p.is_source(2) for p in pkts] == [True, True, False, False]

    def test_from_code_for_segment(self):
        code = code_for_segment(10240, 1024, 0.84)
        assert len(packetize(SourceBlockPlan(3, code, 10240))) == 12

    def test_short_last_source_symbol(self):
        code = code_for_segment(2500, 1024, 0.5)
        pkts = packetize(SourceBlockPlan(1, code, 2500))
        assert [p.payload_len for p in pkts] == [1024, 1024, 452, 1024, 1024, 1024]

    def test_plan_rejects_wrong_length(self):
        with pytest.raises(FramingError):
            SourceBlockPlan(1, RaptorCode(2, 0, 1024), 5000)


class TestChannel:
    pkts = packetize(SourceBlockPlan(1, RaptorCode(8, 4)))

    def test_lossless(self):
        assert apply_channel(self.pkts, ErasureChannel(0.0), 1) == self.pkts

    def test_all_lost(self):
        assert apply_channel(self.pkts, ErasureChannel(1.0), 1) == []

    def test_law_of_large_numbers(self):
        many = list(range(100_000))
        frac = len(apply_channel(many, ErasureChannel(0.5), 9)) / len(many)
        assert abs(frac - 0.5) <= 0.01

    def test_deterministic(self):
        a = apply_channel(self.pkts, ErasureChannel(0.3), 77)
        b = apply_channel(self.pkts, ErasureChannel(0.3), 77)
        assert a == b

    @given(seed=st.integers(0, 2**32), per=st.floats(0, 1))
    def test_conservation(self, seed, per):
        survivors = apply_channel(self.pkts, ErasureChannel(per), seed)
        dropped = [p for p in self.pkts if p not in survivors]
        assert len(survivors) + len(dropped) == len(self.pkts)

    @pytest.mark.parametrize("k,r,per", [(4, 2, 0.2), (8, 4, 0.3), (3, 0, 0.5), (6, 6, 0.1)])
    def test_survivor_counts_match_binomial(self, k, r, per):
        code, ch = RaptorCode(k, r), ErasureChannel(per)
        pkts = packetize(SourceBlockPlan(1, code))
        rng = np.random.default_rng(2024)
        trials = 20_000
        counts = np.bincount([len(apply_channel(pkts, ch, rng)) for _ in range(trials)], minlength=k + r + 1)
        expected = symbols_received_distribution(code, ch) * trials
        # pool sparse cells so each expected count is at least 5
        obs, exp, acc_o, acc_e = [], [], 0.0, 0.0
        for o, e in zip(counts, expected):
            acc_o, acc_e = acc_o + o, acc_e + e
            if acc_e >= 5:
                obs.append(acc_o)
                exp.append(acc_e)
                acc_o = acc_e = 0.0
        obs[-1] += acc_o
        exp[-1] += acc_e
        _, p_value = stats.chisquare(obs, exp)
        assert p_value > 0.01


class TestDecode:
    def test_below_k_always_fails(self):
        code = RaptorCode(10, 4)
        rng = np.random.default_rng(0)
        assert not any(adjudicate_decode(code, 9, rng) for _ in range(1000))

    def test_heavy_redundancy_succeeds(self):
        code = RaptorCode(10, 40)
        assert 0.85 * 0.567**40 < 1e-9
        rng = np.random.default_rng(0)
        assert all(adjudicate_decode(code, 50, rng) for _ in range(10_000))

    def test_failure_frequency_at_k(self):
        code = RaptorCode(10, 4)
        rng = np.random.default_rng(5)
        fails = sum(not adjudicate_decode(code, 10, rng) for _ in range(1_000_000))
        assert abs(fails / 1_000_000 - 0.85) <= 0.002

    def test_seeded_verdict_is_deterministic(self):
        code = RaptorCode(10, 4)
        assert [adjudicate_decode(code, 11, s) for s in range(50)] == [adjudicate_decode(code, 11, s) for s in range(50)]

    def test_vectorized_matches_model(self):
        code = RaptorCode(10, 4)
        rng = np.random.default_rng(8)
        ok = adjudicate_decode_many(code, np.full(200_000, 12), rng)
        assert abs((1 - ok.mean()) - 0.85 * 0.567**2) <= 0.004


class TestLoopback:
    def test_block_over_udp(self):
        code = code_for_segment(5000, 1024, 0.7)
        fdt = build_fdt(9, "seg-9.m4s", 5000, code)
        pkts = packetize(SourceBlockPlan(9, code, 5000))
        with LoopbackTransport(timeout=0.5) as transport:
            transport.send_fdt(fdt)
            transport.send_packets(pkts)
            fdts, received = transport.receive(len(pkts) + 1)
        assert fdts == [fdt]
        assert sorted(received, key=lambda p: p.esi) == pkts
