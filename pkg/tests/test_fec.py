import itertools

import numpy as np
import pytest

from ulpsim.fec import (
    FecInputError,
    FecMatrixConfig,
    FecPacket,
    encode,
    fec_packet_count,
    matrix_layout,
    n_matrices,
    parse_fec_payload,
    recover,
    recover_mask,
    serialize_fec_payload,
)
from ulpsim.rtp import RtpPacket


def make_packets(n, start_seq=0, payload_len=8, rng=None):
    pkts = []
    for i in range(n):
        if rng is None:
            payload = bytes([(start_seq + i) & 0xFF] * payload_len)
        else:
            payload = bytes(rng.integers(0, 256, size=int(rng.integers(1, payload_len + 1)), dtype=np.uint8))
        pkts.append(
            RtpPacket(
                seq=(start_seq + i) & 0xFFFF,
                timestamp=0,
                ssrc=1,
                marker=False,
                payload_type=96,
                extension=None,
                payload=payload,
            )
        )
    return pkts


class TestCounts:
    def test_exact_fit(self):
        assert n_matrices(80, FecMatrixConfig(4, 20)) == 1

    def test_ceiling(self):
        assert n_matrices(81, FecMatrixConfig(4, 20)) == 2

    def test_single_packet(self):
        assert n_matrices(1, FecMatrixConfig(4, 20)) == 1
        assert fec_packet_count(1, FecMatrixConfig(4, 20)) == 1

    def test_full_matrix_parity(self):
        assert fec_packet_count(80, FecMatrixConfig(4, 20)) == 20

    def test_short_tail(self):
        assert fec_packet_count(5, FecMatrixConfig(4, 20)) == 2

    def test_encode_count_matches_formula_exhaustively(self):
        for cfg in (FecMatrixConfig(4, 20), FecMatrixConfig(3, 4), FecMatrixConfig(2, 5)):
            for z in range(1, 201):
                got = len(encode(make_packets(z), cfg))
                assert got == fec_packet_count(z, cfg), (cfg, z)


class TestEncode:
    def test_single_packet_parity_is_identity(self):
        [p] = make_packets(1, payload_len=6)
        [f] = encode([p], FecMatrixConfig(4, 20))
        assert f.payload == p.payload
        assert f.length_recovery == len(p.payload)
        assert f.na == 1

    def test_identical_payloads_in_column_cancel(self):
        pkts = make_packets(2)
        pkts = [pkts[0], pkts[1].__class__(**{**pkts[1].__dict__, "payload": pkts[0].payload})]
        # D=2, L=1: both packets share the single column
        [f] = encode(pkts, FecMatrixConfig(2, 1))
        assert f.payload == bytes(len(pkts[0].payload))

    def test_row_major_column_grouping(self):
        pkts = make_packets(4)
        fecs = encode(pkts, FecMatrixConfig(2, 2))
        assert len(fecs) == 2
        assert fecs[0].protected_seqs() == [0, 2]
        assert fecs[1].protected_seqs() == [1, 3]

    def test_full_matrix_offsets(self):
        fecs = encode(make_packets(80, start_seq=100), FecMatrixConfig(4, 20))
        for col, f in enumerate(fecs):
            assert f.sn_base == 100 + col
            assert f.offset == 20
            assert f.na == 4

    def test_short_group_uses_narrow_matrix(self):
        # 5 packets after a D=4 layout: width ceil(5/4)=2, columns {0,2,4} and {1,3}
        fecs = encode(make_packets(5), FecMatrixConfig(4, 20))
        assert [f.protected_seqs() for f in fecs] == [[0, 2, 4], [1, 3]]

    def test_non_contiguous_rejected(self):
        pkts = make_packets(3)
        pkts[2] = RtpPacket(
            seq=7, timestamp=0, ssrc=1, marker=False, payload_type=96, extension=None, payload=b"x"
        )
        with pytest.raises(FecInputError, match="contiguous"):
            encode(pkts, FecMatrixConfig(2, 2))

    def test_seq_wraparound_accepted(self):
        pkts = make_packets(4, start_seq=0xFFFE)
        fecs = encode(pkts, FecMatrixConfig(2, 2))
        assert fecs[0].protected_seqs() == [0xFFFE, 0x0000]


class TestRecover:
    def test_burst_of_two_spans_columns(self):
        pkts = make_packets(4)
        fecs = encode(pkts, FecMatrixConfig(2, 2))
        got = recover({2: pkts[2], 3: pkts[3]}, fecs, range(0, 4), FecMatrixConfig(2, 2))
        assert got == {0: pkts[0].payload, 1: pkts[1].payload}

    def test_two_losses_in_one_column_unrecoverable(self):
        pkts = make_packets(4)
        fecs = encode(pkts, FecMatrixConfig(2, 2))
        got = recover({1: pkts[1], 3: pkts[3]}, fecs, range(0, 4), FecMatrixConfig(2, 2))
        assert got == {}

    def test_nothing_lost_nothing_recovered(self):
        pkts = make_packets(4)
        fecs = encode(pkts, FecMatrixConfig(2, 2))
        assert recover({p.seq: p for p in pkts}, fecs, range(0, 4), FecMatrixConfig(2, 2)) == {}

    def test_recovered_payload_byte_equal_random(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            d = int(rng.integers(1, 5))
            l = int(rng.integers(1, 6))
            z = int(rng.integers(1, 3 * d * l + 1))
            pkts = make_packets(z, payload_len=12, rng=rng)
            cfg = FecMatrixConfig(d, l)
            fecs = encode(pkts, cfg)
            lost = rng.random(z) < 0.2
            received = {p.seq: p for p, x in zip(pkts, lost) if not x}
            got = recover(received, fecs, range(z), cfg)
            for seq, payload in got.items():
                assert lost[seq], "recovered a packet that was received"
                assert payload == pkts[seq].payload

    def test_exhaustive_d3_l4_all_patterns(self):
        # every loss pattern of a full 3x4 matrix with parity intact:
        # exactly the packets alone in their column come back
        cfg = FecMatrixConfig(3, 4)
        pkts = make_packets(12, payload_len=5)
        fecs = encode(pkts, cfg)
        for bits in range(2**12):
            lost = [(bits >> i) & 1 == 1 for i in range(12)]
            received = {p.seq: p for p, x in zip(pkts, lost) if not x}
            got = recover(received, fecs, range(12), cfg)
            expect = set()
            for col in range(4):
                members = [col, col + 4, col + 8]
                missing = [m for m in members if lost[m]]
                if len(missing) == 1:
                    expect.add(missing[0])
            assert set(got) == expect, bits

    def test_any_burst_up_to_l_recovered_on_full_matrices(self):
        rng = np.random.default_rng(11)
        for d in range(1, 9):
            for l in range(1, 9):
                cfg = FecMatrixConfig(d, l)
                z = d * l
                pkts = make_packets(z, payload_len=4)
                fecs = encode(pkts, cfg)
                for _ in range(5):
                    blen = int(rng.integers(1, l + 1))
                    start = int(rng.integers(0, z - blen + 1))
                    lost = set(range(start, start + blen))
                    received = {p.seq: p for p in pkts if p.seq not in lost}
                    got = recover(received, fecs, range(z), cfg)
                    assert set(got) == lost


class TestRecoverMask:
    def test_matches_recover_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            d = int(rng.integers(1, 5))
            l = int(rng.integers(1, 6))
            cfg = FecMatrixConfig(d, l)
            z = int(rng.integers(1, 3 * d * l + 1))
            pkts = make_packets(z, payload_len=3)
            fecs = encode(pkts, cfg)
            lost = rng.random(z) < 0.3
            fec_lost = rng.random(len(fecs)) < 0.3
            received = {p.seq: p for p, x in zip(pkts, lost) if not x}
            kept_fec = [f for f, x in zip(fecs, fec_lost) if not x]
            via_packets = set(recover(received, kept_fec, range(z), cfg))
            via_mask = set(np.flatnonzero(recover_mask(lost, fec_lost, cfg)))
            assert via_packets == via_mask

    def test_never_recovers_received(self):
        rng = np.random.default_rng(3)
        cfg = FecMatrixConfig(3, 3)
        for _ in range(100):
            lost = rng.random(9) < 0.4
            mask = recover_mask(lost, np.zeros(3, dtype=bool), cfg)
            assert not np.any(mask & ~lost)


class TestWireFormat:
    def test_golden_header(self):
        f = FecPacket(sn_base=5, offset=20, na=4, length_recovery=1316, payload=b"\xaa\xbb")
        assert serialize_fec_payload(f) == bytes.fromhex("000500140004052400000000aabb")

    def test_round_trip(self):
        f = FecPacket(sn_base=700, offset=7, na=3, length_recovery=99, payload=b"abc")
        assert parse_fec_payload(serialize_fec_payload(f)) == f

    def test_truncated(self):
        with pytest.raises(FecInputError, match="truncated"):
            parse_fec_payload(b"\x00" * 11)


class TestLayout:
    def test_full_plus_remainder(self):
        cfg = FecMatrixConfig(4, 20)
        assert matrix_layout(161, cfg) == [(0, 80, 20), (80, 80, 20), (160, 1, 1)]

    def test_remainder_width(self):
        assert matrix_layout(5, FecMatrixConfig(4, 20)) == [(0, 5, 2)]
