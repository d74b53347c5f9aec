"""RTP packetisation with a frame-label header extension.

Each video frame maps to a run of RTP packets whose header extension
carries everything the protection engine needs: frame type, begin/end
flags, and distance to the end of the GOP. Receivers therefore only ever
parse headers; payloads are deterministic filler since their content never
influences any decision, only their (configured) length does.

Wire format: standard 12-byte RTP v2 fixed header, X bit set, followed by
a one-word RFC 3550 extension: profile 0x5641, length 1, then
frame_type(2) | begin(1) | end(1) | dist_to_gop_end(12) | reserved(16).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .stream import FrameMeta

__all__ = [
    "RtpPacket",
    "FrameLabelExt",
    "RtpParseError",
    "packetize_frame",
    "parse_header",
    "frame_timestamp",
    "EXT_PROFILE",
    "DATA_PAYLOAD_TYPE",
    "FEC_PAYLOAD_TYPE",
    "DEFAULT_PAYLOAD_BYTES",
]

EXT_PROFILE = 0x5641
DATA_PAYLOAD_TYPE = 96
FEC_PAYLOAD_TYPE = 97
DEFAULT_PAYLOAD_BYTES = 1316  # seven 188-byte TS packets

_TYPE_TO_CODE = {"I": 0, "P": 1, "B": 2}
_CODE_TO_TYPE = {v: k for k, v in _TYPE_TO_CODE.items()}


class RtpParseError(ValueError):
    """Malformed or truncated RTP packet bytes."""


@dataclass(frozen=True)
class FrameLabelExt:
    frame_type: str
    begin: bool
    end: bool
    dist_to_gop_end: int

    def __post_init__(self):
        if self.frame_type not in _TYPE_TO_CODE:
            raise ValueError(f"bad frame_type {self.frame_type!r}")
        if not 0 <= self.dist_to_gop_end < 4096:
            raise ValueError(
                f"dist_to_gop_end={self.dist_to_gop_end} does not fit in 12 bits"
            )


@dataclass(frozen=True)
class RtpPacket:
    seq: int
    timestamp: int
    ssrc: int
    marker: bool
    payload_type: int
    extension: FrameLabelExt | None
    payload: bytes = field(repr=False, default=b"")

    def serialize(self) -> bytes:
        x_bit = 1 if self.extension is not None else 0
        byte0 = (2 << 6) | (x_bit << 4)
        byte1 = (int(self.marker) << 7) | (self.payload_type & 0x7F)
        head = struct.pack(
            "!BBHII", byte0, byte1, self.seq & 0xFFFF, self.timestamp & 0xFFFFFFFF,
            self.ssrc & 0xFFFFFFFF,
        )
        if self.extension is None:
            return head + self.payload
        ext = self.extension
        word = (
            (_TYPE_TO_CODE[ext.frame_type] << 30)
            | (int(ext.begin) << 29)
            | (int(ext.end) << 28)
            | (ext.dist_to_gop_end << 16)
        )
        return head + struct.pack("!HHI", EXT_PROFILE, 1, word) + self.payload


def _filler(seq: int, length: int) -> bytes:
    return bytes((seq + i) & 0xFF for i in range(length))


def frame_timestamp(frame_index: int, framerate: float) -> int:
    """90 kHz RTP clock: timestamp of a frame at its display instant."""
    return int(round(frame_index * 90000.0 / framerate)) & 0xFFFFFFFF


def packetize_frame(
    frame: FrameMeta,
    ssrc: int,
    start_seq: int,
    timestamp: int,
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES,
    payload_type: int = DATA_PAYLOAD_TYPE,
) -> list[RtpPacket]:
    """Wrap one frame into size_packets labelled RTP packets.

    begin is set on the first packet, end (and the marker bit) on the last;
    both are set for single-packet frames. Sequence numbers wrap mod 2^16.
    """
    packets = []
    for i in range(frame.size_packets):
        seq = (start_seq + i) & 0xFFFF
        begin = i == 0
        end = i == frame.size_packets - 1
        packets.append(
            RtpPacket(
                seq=seq,
                timestamp=timestamp,
                ssrc=ssrc,
                marker=end,
                payload_type=payload_type,
                extension=FrameLabelExt(
                    frame_type=frame.frame_type,
                    begin=begin,
                    end=end,
                    dist_to_gop_end=frame.dist_to_gop_end,
                ),
                payload=_filler(seq, payload_bytes),
            )
        )
    return packets


def parse_header(data: bytes) -> dict:
    """Parse the fixed header plus the frame-label extension.

    Returns {seq, timestamp, ssrc, marker, payload_type, frame_type,
    begin, end, dist_to_gop_end}. Exact inverse of serialize() for packets
    produced by packetize_frame.
    """
    if len(data) < 12:
        raise RtpParseError(f"truncated packet: {len(data)} bytes < 12")
    byte0, byte1, seq, timestamp, ssrc = struct.unpack("!BBHII", data[:12])
    version = byte0 >> 6
    if version != 2:
        raise RtpParseError(f"unsupported RTP version {version}")
    if not (byte0 >> 4) & 1:
        raise RtpParseError("missing frame label extension (X bit clear)")
    if len(data) < 20:
        raise RtpParseError("truncated extension header")
    profile, length, word = struct.unpack("!HHI", data[12:20])
    if profile != EXT_PROFILE:
        raise RtpParseError(f"unknown extension profile 0x{profile:04X}")
    if length != 1:
        raise RtpParseError(f"unexpected extension length {length}")
    return {
        "seq": seq,
        "timestamp": timestamp,
        "ssrc": ssrc,
        "marker": bool(byte1 >> 7),
        "payload_type": byte1 & 0x7F,
        "frame_type": _CODE_TO_TYPE[(word >> 30) & 0x3],
        "begin": bool((word >> 29) & 1),
        "end": bool((word >> 28) & 1),
        "dist_to_gop_end": (word >> 16) & 0xFFF,
    }
