"""Interleaved XOR parity over matrices of consecutive RTP packets.

Consecutive data packets fill a rows_d x cols_l matrix row by row, and one
parity packet is emitted per column (XOR of the column's payloads, zero
padded to the longest). A column therefore holds packets spaced cols_l
apart, so a burst of up to cols_l consecutive losses hits every column at
most once and is fully repairable.

A trailing group of r < rows_d*cols_l packets is arranged the same way in
a narrower matrix of width ceil(r/rows_d), keeping the one-parity-per-
column rule (total parity count is always ceil(z/rows_d)) while preserving
interleaving proportional to the group size.

Parity packets ride in RTP packets of a dedicated payload type; their
payload starts with a 12-byte header {sn_base:16, offset:16, na:16,
length_recovery:16, reserved:32} followed by the XOR of the protected
payloads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .rtp import RtpPacket

__all__ = [
    "FecMatrixConfig",
    "FecPacket",
    "FecInputError",
    "n_matrices",
    "fec_packet_count",
    "matrix_layout",
    "encode",
    "recover",
    "recover_mask",
    "serialize_fec_payload",
    "parse_fec_payload",
]

FEC_HEADER_BYTES = 12


class FecInputError(ValueError):
    """Input packets violate the encoder's contract."""


@dataclass(frozen=True)
class FecMatrixConfig:
    rows_d: int
    cols_l: int

    def __post_init__(self):
        if self.rows_d < 1 or self.cols_l < 1:
            raise ValueError("matrix dimensions must be >= 1")

    @property
    def capacity(self) -> int:
        return self.rows_d * self.cols_l


@dataclass(frozen=True)
class FecPacket:
    """One parity packet covering the data seqs sn_base + j*offset, j < na."""

    sn_base: int
    offset: int
    na: int
    length_recovery: int
    payload: bytes = field(repr=False, default=b"")

    def protected_seqs(self) -> list[int]:
        return [(self.sn_base + j * self.offset) & 0xFFFF for j in range(self.na)]


def n_matrices(z: int, cfg: FecMatrixConfig) -> int:
    """Matrices needed to cover a frame of z packets: ceil(z / (D*L))."""
    if z < 1:
        raise ValueError("z must be >= 1")
    return -(-z // cfg.capacity)


def fec_packet_count(z: int, cfg: FecMatrixConfig) -> int:
    """Parity packets for z data packets: one per column, ceil(z / D)."""
    if z < 1:
        raise ValueError("z must be >= 1")
    return -(-z // cfg.rows_d)


def matrix_layout(z: int, cfg: FecMatrixConfig) -> list[tuple[int, int, int]]:
    """(start, count, width) of each matrix covering a z-packet block.

    start is the offset of the matrix's first packet within the block;
    width is cols_l for full matrices and ceil(count/rows_d) for a short
    final group. Within a matrix, packet at local position p sits in
    column p % width.
    """
    out = []
    start = 0
    while z - start >= cfg.capacity:
        out.append((start, cfg.capacity, cfg.cols_l))
        start += cfg.capacity
    rem = z - start
    if rem > 0:
        out.append((start, rem, -(-rem // cfg.rows_d)))
    return out


def _column_members(count: int, width: int, col: int) -> range:
    return range(col, count, width)


def encode(data: list[RtpPacket], cfg: FecMatrixConfig) -> list[FecPacket]:
    """Generate the parity packets for a contiguous run of data packets.

    Sequence numbers must be contiguous (mod 2^16). Output order is matrix
    by matrix, column by column; the count always equals
    fec_packet_count(len(data), cfg).
    """
    if not data:
        raise FecInputError("no data packets to protect")
    base = data[0].seq
    for i, pkt in enumerate(data):
        if pkt.seq != (base + i) & 0xFFFF:
            raise FecInputError(
                f"sequence numbers not contiguous at position {i}: "
                f"expected {(base + i) & 0xFFFF}, got {pkt.seq}"
            )
    out = []
    for start, count, width in matrix_layout(len(data), cfg):
        for col in range(min(width, count)):
            members = [data[start + j] for j in _column_members(count, width, col)]
            max_len = max(len(p.payload) for p in members)
            acc = bytearray(max_len)
            length_rec = 0
            for p in members:
                length_rec ^= len(p.payload)
                for k, b in enumerate(p.payload):
                    acc[k] ^= b
            out.append(
                FecPacket(
                    sn_base=(base + start + col) & 0xFFFF,
                    offset=width,
                    na=len(members),
                    length_recovery=length_rec,
                    payload=bytes(acc),
                )
            )
    return out


def recover(
    received_data: dict[int, RtpPacket] | list[RtpPacket],
    received_fec: list[FecPacket],
    expected_seqs: range,
    cfg: FecMatrixConfig,
) -> dict[int, bytes]:
    """Repair missing data packets from the parity that arrived.

    A missing packet is recovered iff it is the only missing member of a
    column whose parity packet was received; the payload is the XOR of the
    parity payload with the received members'. With one parity per column
    the columns are independent, so a single pass settles everything.
    Returns {seq: payload} for the recovered packets; losses that cannot
    be repaired are simply absent.
    """
    if not isinstance(received_data, dict):
        received_data = {p.seq: p for p in received_data}
    expected = {s & 0xFFFF for s in expected_seqs}
    recovered: dict[int, bytes] = {}
    for fec in received_fec:
        missing = [
            s
            for s in fec.protected_seqs()
            if s in expected and s not in received_data
        ]
        if len(missing) != 1:
            continue
        have = [
            received_data[s].payload
            for s in fec.protected_seqs()
            if s in received_data
        ]
        length = fec.length_recovery
        for p in have:
            length ^= len(p)
        acc = bytearray(fec.payload)
        for p in have:
            if len(p) > len(acc):
                acc.extend(b"\x00" * (len(p) - len(acc)))
            for k, b in enumerate(p):
                acc[k] ^= b
        recovered[missing[0]] = bytes(acc[:length])
    return recovered


def recover_mask(
    lost_data: np.ndarray, fec_lost: np.ndarray, cfg: FecMatrixConfig
) -> np.ndarray:
    """Which lost packets of one encoded block are repairable.

    Metadata-level twin of recover(): lost_data[i] marks the i-th data
    packet of the block lost, fec_lost[c] the c-th parity packet (encode
    order). Returns a boolean mask over the data packets. Equivalent to
    running recover() and checking membership; kept separate so the
    simulator never has to materialise payload bytes.
    """
    lost_data = np.asarray(lost_data, dtype=bool)
    fec_lost = np.asarray(fec_lost, dtype=bool)
    z = len(lost_data)
    out = np.zeros(z, dtype=bool)
    fec_base = 0
    for start, count, width in matrix_layout(z, cfg):
        ncols = min(width, count)
        local = lost_data[start : start + count]
        cols = np.arange(count) % width
        losses_per_col = np.bincount(cols, weights=local, minlength=ncols)
        repairable_col = (losses_per_col == 1) & ~fec_lost[fec_base : fec_base + ncols]
        out[start : start + count] = local & repairable_col[cols]
        fec_base += ncols
    return out


def serialize_fec_payload(fec: FecPacket) -> bytes:
    """FEC header plus parity bytes, carried as an RTP payload."""
    head = struct.pack(
        "!HHHHI", fec.sn_base, fec.offset, fec.na, fec.length_recovery, 0
    )
    return head + fec.payload


def parse_fec_payload(data: bytes) -> FecPacket:
    if len(data) < FEC_HEADER_BYTES:
        raise FecInputError(f"truncated FEC header: {len(data)} bytes")
    sn_base, offset, na, length_rec, _ = struct.unpack(
        "!HHHHI", data[:FEC_HEADER_BYTES]
    )
    return FecPacket(
        sn_base=sn_base,
        offset=offset,
        na=na,
        length_recovery=length_rec,
        payload=data[FEC_HEADER_BYTES:],
    )
