"""Frame traces: the coding features the protection engine decides on.

A trace is an ordered list of frames, each carrying the three features
that matter for loss protection: frame type (I/P/B), size in packets, and
distance to the end of its GOP. Traces are either generated synthetically
from a GOP pattern and per-type size model, or loaded from a small text
format (see save_trace/load_trace).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FrameMeta",
    "FrameTrace",
    "Dfs",
    "IFrameSizeStats",
    "SizeModel",
    "TraceError",
    "generate_trace",
    "segment_dfs",
    "estimate_iframe_stats",
    "save_trace",
    "load_trace",
]

FRAME_TYPES = ("I", "P", "B")


class TraceError(ValueError):
    """Inconsistent GOP spec, malformed trace file, or broken invariants."""


@dataclass(frozen=True)
class FrameMeta:
    index: int
    frame_type: str  # "I", "P" or "B"
    size_packets: int
    dist_to_gop_end: int

    def __post_init__(self):
        if self.frame_type not in FRAME_TYPES:
            raise TraceError(f"frame {self.index}: bad type {self.frame_type!r}")
        if self.size_packets < 1:
            raise TraceError(f"frame {self.index}: size_packets must be >= 1")
        if self.dist_to_gop_end < 0:
            raise TraceError(f"frame {self.index}: negative dist_to_gop_end")


@dataclass(frozen=True)
class FrameTrace:
    frames: tuple[FrameMeta, ...]
    gop_length: int
    framerate: float

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        _validate_gop_structure(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def total_packets(self) -> int:
        return sum(f.size_packets for f in self.frames)

    def bitrate(self, packet_bits: int) -> float:
        """Mean stream bitrate in bit/s given a fixed per-packet size."""
        if not self.frames:
            return 0.0
        duration = len(self.frames) / self.framerate
        return self.total_packets * packet_bits / duration


def _validate_gop_structure(frames: tuple[FrameMeta, ...]) -> None:
    for i, f in enumerate(frames):
        if f.index != i:
            raise TraceError(f"frame indices not contiguous at position {i}")
        starts_gop = i == 0 or frames[i - 1].dist_to_gop_end == 0
        if starts_gop != (f.frame_type == "I"):
            raise TraceError(f"frame {i}: I-frames must start GOPs (and only they)")
        if not starts_gop and f.dist_to_gop_end != frames[i - 1].dist_to_gop_end - 1:
            raise TraceError(f"frame {i}: dist_to_gop_end must decrease by 1")


@dataclass(frozen=True)
class Dfs:
    """A protection decision window of consecutive frames."""

    frames: tuple[FrameMeta, ...]
    kind: str  # "I_DFS" if any frame is an I-frame, else "PB_DFS"

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class IFrameSizeStats:
    mu: float
    sigma: float


@dataclass(frozen=True)
class SizeModel:
    """Per-type frame sizes in packets, drawn from a clipped normal."""

    mean: dict[str, float] = field(
        default_factory=lambda: {"I": 170.0, "P": 62.0, "B": 27.5}
    )
    stddev: dict[str, float] = field(
        default_factory=lambda: {"I": 25.5, "P": 9.3, "B": 4.125}
    )
    distribution: str = "normal"

    def __post_init__(self):
        if self.distribution not in ("normal", "constant"):
            raise TraceError(f"unknown size distribution {self.distribution!r}")
        for t in FRAME_TYPES:
            if self.mean.get(t, 0) < 1:
                raise TraceError(f"size mean for {t} must be >= 1 packet")


def _gop_pattern(gop_length: int, b_run: int) -> list[str]:
    # I followed by repeated [B * b_run, P] blocks, truncated to gop_length
    if gop_length < 1:
        raise TraceError("gop_length must be >= 1")
    if b_run < 0:
        raise TraceError("b_run must be >= 0")
    if b_run >= gop_length and gop_length > 1:
        raise TraceError(f"b_run={b_run} leaves no room for P-frames in GOP")
    types = ["I"]
    while len(types) < gop_length:
        block = ["B"] * b_run + ["P"]
        types.extend(block[: gop_length - len(types)])
    return types


def generate_trace(
    gop_length: int = 22,
    b_run: int = 2,
    n_gops: int = 250,
    size_model: SizeModel | None = None,
    framerate: float = 25.0,
    seed: int = 0,
) -> FrameTrace:
    """Synthesise a trace with the I (B^b_run P)* GOP pattern.

    Sizes are drawn per type from the size model, rounded to the nearest
    integer and clipped to at least one packet. Deterministic for a seed.
    The default profile (GOP 22, 25 fps, means 170/62/27.5 packets of
    1356 bytes) lands near 12 Mbit/s with I-frames several times the size
    of P-frames, the regime budget reservation is designed for.
    """
    size_model = size_model or SizeModel()
    pattern = _gop_pattern(gop_length, b_run)
    rng = np.random.default_rng(seed)
    types = pattern * n_gops
    means = np.array([size_model.mean[t] for t in types])
    if size_model.distribution == "constant":
        sizes = means
    else:
        devs = np.array([size_model.stddev.get(t, 0.0) for t in types])
        sizes = rng.normal(means, devs)
    sizes = np.maximum(1, np.rint(sizes)).astype(int)
    dists = np.tile(np.arange(gop_length - 1, -1, -1), n_gops)
    frames = tuple(
        FrameMeta(i, t, int(z), int(d))
        for i, (t, z, d) in enumerate(zip(types, sizes, dists))
    )
    return FrameTrace(frames=frames, gop_length=gop_length, framerate=framerate)


def segment_dfs(trace: FrameTrace, n_frames_dfs: int) -> list[Dfs]:
    """Cut the trace into consecutive non-overlapping decision windows.

    The last window may be shorter. A window containing at least one
    I-frame is an I_DFS, otherwise a PB_DFS.
    """
    if n_frames_dfs < 1:
        raise TraceError("n_frames_dfs must be >= 1")
    out = []
    for start in range(0, len(trace.frames), n_frames_dfs):
        window = trace.frames[start : start + n_frames_dfs]
        kind = "I_DFS" if any(f.frame_type == "I" for f in window) else "PB_DFS"
        out.append(Dfs(frames=window, kind=kind))
    return out


def estimate_iframe_stats(trace: FrameTrace) -> IFrameSizeStats:
    """Sample mean and stddev (n-1 denominator) of I-frame sizes."""
    sizes = [f.size_packets for f in trace.frames if f.frame_type == "I"]
    if len(sizes) < 2:
        raise TraceError(f"need >= 2 I-frames to estimate stats, got {len(sizes)}")
    arr = np.asarray(sizes, dtype=float)
    return IFrameSizeStats(mu=float(arr.mean()), sigma=float(arr.std(ddof=1)))


def save_trace(trace: FrameTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#framerate={trace.framerate:g} gop_length={trace.gop_length}\n")
        for f in trace.frames:
            fh.write(f"{f.index},{f.frame_type},{f.size_packets},{f.dist_to_gop_end}\n")


def load_trace(path) -> FrameTrace:
    """Parse a trace file written by save_trace. Raises TraceError with the
    offending line number on malformed input."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise TraceError(f"{path}: line 1: missing header line")
        fields = dict(
            kv.split("=", 1) for kv in header[1:].split() if "=" in kv
        )
        try:
            framerate = float(fields["framerate"])
            gop_length = int(fields["gop_length"])
        except (KeyError, ValueError) as exc:
            raise TraceError(f"{path}: line 1: bad header ({exc})") from exc
        frames = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise TraceError(f"{path}: line {lineno}: expected 4 fields")
            try:
                frames.append(
                    FrameMeta(int(parts[0]), parts[1], int(parts[2]), int(parts[3]))
                )
            except (ValueError, TraceError) as exc:
                raise TraceError(f"{path}: line {lineno}: {exc}") from exc
    try:
        return FrameTrace(frames=tuple(frames), gop_length=gop_length, framerate=framerate)
    except TraceError as exc:
        raise TraceError(f"{path}: {exc}") from exc
