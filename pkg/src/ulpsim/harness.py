"""Monte-Carlo experiment driver.

One run takes a frame trace, segments it into decision windows, lets the
configured scheme pick frames (or a packet prefix) to protect, generates
parity for each contiguous protected block, pushes everything through the
simulated channel, repairs what the parity allows, and tallies per-type
recovery plus a distortion proxy summed over effectively lost frames (a
frame is effectively lost when at least one of its data packets is neither
received nor repaired).

Runs are deterministic per (config, seed). Seeds are independent, so they
can execute in parallel worker processes.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .channel import ChannelParams, ChannelState, derive_params, simulate_states, stationary
from .engine import (
    BudgetState,
    DfsState,
    DistortionConstants,
    Policy,
    ProtectionConfig,
    decide_mp,
    decide_up,
    decide_va_ulp,
    estimate_fec_packet_bits,
    make_budget_state,
    nominal_budget,
)
from .fec import FecMatrixConfig, matrix_layout, recover_mask
from .stream import FrameTrace, SizeModel, estimate_iframe_stats, generate_trace, load_trace

__all__ = [
    "ChannelSpec",
    "StreamSpec",
    "ExperimentConfig",
    "TypeStats",
    "RunMetrics",
    "RunResult",
    "ConfigError",
    "SCHEMES",
    "build_trace",
    "run",
    "sweep",
    "report",
    "metrics_to_json",
    "metrics_from_json",
]

SCHEMES = ("va_ulp", "mp", "up")
FRAME_TYPES = ("I", "P", "B")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ChannelSpec:
    plr: float
    abl: float
    name: str = ""
    initial_state: str = "stationary"  # "stationary", "G" or "B"

    def label(self) -> str:
        return self.name or f"plr{self.plr:g}-abl{self.abl:g}"

    def params(self) -> ChannelParams:
        return derive_params(self.plr, self.abl)


@dataclass(frozen=True)
class StreamSpec:
    """Where frames come from: a trace file, or the synthetic generator."""

    path: str | None = None
    gop_length: int = 22
    b_run: int = 2
    n_gops: int = 250
    framerate: float = 25.0
    size_mean: tuple[float, float, float] = (170.0, 62.0, 27.5)  # I, P, B
    size_stddev_frac: float = 0.15
    seed: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamSpec = field(default_factory=StreamSpec)
    channel: ChannelSpec = field(default_factory=lambda: ChannelSpec(0.01, 10.0, "adsl"))
    scheme: str = "va_ulp"
    redundancy_rate: float | None = 0.05  # fraction of measured stream bitrate
    r_protection: float | None = None  # bit/s; overrides redundancy_rate
    rows_d: int = 4
    cols_l: int = 20
    n_frames_dfs: int = 5
    p_coverage: float = 95.0
    constants: DistortionConstants = field(default_factory=DistortionConstants)
    packet_bytes: int = 1356  # payload + headers, the budget accounting unit
    fec_header_bytes: int = 12
    fec_pkt_window: int = 100
    seeds: tuple[int, ...] = tuple(range(30))
    fec_lossless: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if self.r_protection is None and not (self.redundancy_rate or 0) > 0:
            raise ConfigError("need redundancy_rate > 0 or an explicit r_protection")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.channel.initial_state not in ("stationary", "G", "B"):
            raise ConfigError(f"bad initial_state {self.channel.initial_state!r}")


@dataclass(frozen=True)
class TypeStats:
    sent: int
    lost: int
    recovered: int
    recovery_rate: float
    zero_loss: bool  # rate reported as 1.0 by convention when nothing was lost


@dataclass(frozen=True)
class RunMetrics:
    seed: int
    per_type: dict[str, TypeStats]
    overall: TypeStats
    frames_effectively_lost: dict[str, int]
    distortion_proxy: float
    fec_packets_sent: int
    fec_bits_sent: float
    fec_bitrate: float
    r_protection: float


@dataclass(frozen=True)
class RunResult:
    scheme: str
    channel: str
    redundancy_rate: float
    r_protection: float
    runs: tuple[RunMetrics, ...]

    def mean_recovery(self, frame_type: str | None = None) -> float:
        vals = [
            (m.per_type[frame_type] if frame_type else m.overall).recovery_rate
            for m in self.runs
        ]
        return float(np.mean(vals))

    def std_recovery(self, frame_type: str | None = None) -> float:
        vals = [
            (m.per_type[frame_type] if frame_type else m.overall).recovery_rate
            for m in self.runs
        ]
        return float(np.std(vals))

    def mean_distortion(self) -> float:
        return float(np.mean([m.distortion_proxy for m in self.runs]))

    def std_distortion(self) -> float:
        return float(np.std([m.distortion_proxy for m in self.runs]))


# --------------------------------------------------------------------------
# Trace preparation
# --------------------------------------------------------------------------


def build_trace(spec: StreamSpec) -> FrameTrace:
    if spec.path is not None:
        return load_trace(spec.path)
    mean = dict(zip(FRAME_TYPES, spec.size_mean))
    stddev = {t: m * spec.size_stddev_frac for t, m in mean.items()}
    return generate_trace(
        gop_length=spec.gop_length,
        b_run=spec.b_run,
        n_gops=spec.n_gops,
        size_model=SizeModel(mean=mean, stddev=stddev),
        framerate=spec.framerate,
        seed=spec.seed,
    )


class _Prepared:
    """Trace unpacked into flat arrays plus the resolved protection config."""

    def __init__(self, config: ExperimentConfig, trace: FrameTrace):
        self.config = config
        self.trace = trace
        type_code = {"I": 0, "P": 1, "B": 2}
        self.types = np.array([type_code[f.frame_type] for f in trace.frames], dtype=np.int8)
        self.sizes = np.array([f.size_packets for f in trace.frames], dtype=np.int64)
        self.dists = np.array([f.dist_to_gop_end for f in trace.frames], dtype=np.int64)
        k = config.constants
        k1 = np.array([k.k1_i, k.k1_p, k.k1_b])
        self.d_iw = k1[self.types] + k.k2 * self.dists + k.k3 * self.sizes
        self.pkt_start = np.concatenate(([0], np.cumsum(self.sizes)))
        self.pkt_type = np.repeat(self.types, self.sizes)
        self.pkt_frame = np.repeat(np.arange(len(trace.frames)), self.sizes)

        pkt_bits = config.packet_bytes * 8
        measured_bitrate = trace.bitrate(pkt_bits)
        if config.r_protection is not None:
            self.r_protection = float(config.r_protection)
            self.redundancy_rate = self.r_protection / measured_bitrate
        else:
            self.redundancy_rate = float(config.redundancy_rate)
            self.r_protection = self.redundancy_rate * measured_bitrate
        n_pkt = int(self.sizes.sum())
        l_pkt_fec = estimate_fec_packet_bits(
            [pkt_bits] * min(config.fec_pkt_window, n_pkt),
            window=config.fec_pkt_window,
            header_bytes=config.fec_header_bytes,
        )
        self.pcfg = ProtectionConfig(
            r_protection=self.r_protection,
            framerate=trace.framerate,
            n_frames_dfs=config.n_frames_dfs,
            fec_cfg=FecMatrixConfig(rows_d=config.rows_d, cols_l=config.cols_l),
            l_pkt_fec=l_pkt_fec,
            l_pkt_data=float(pkt_bits),
            p_coverage=config.p_coverage,
        )
        self.channel_params = config.channel.params()
        if config.scheme == "va_ulp":
            stats = estimate_iframe_stats(trace)
            try:
                self.budget0 = make_budget_state(self.pcfg, stats, trace.gop_length)
            except ValueError as exc:
                raise ConfigError(f"reservation setup failed: {exc}") from exc
        else:
            self.budget0 = None
        # window boundaries in frames
        n = len(trace.frames)
        step = config.n_frames_dfs
        self.windows = [(f0, min(f0 + step, n)) for f0 in range(0, n, step)]
        self.window_nominal: dict[int, int] = {}
        for f0, f1 in self.windows:
            ln = f1 - f0
            if ln not in self.window_nominal:
                self.window_nominal[ln] = nominal_budget(self.pcfg, ln).n_pkt_rtp


def _contiguous_runs(indices: list[int]) -> list[tuple[int, int]]:
    """[(first, last_inclusive)] of maximal consecutive runs."""
    runs = []
    for i in indices:
        if runs and i == runs[-1][1] + 1:
            runs[-1] = (runs[-1][0], i)
        else:
            runs.append((i, i))
    return runs


def _simulate_one(prep: _Prepared, seed: int) -> RunMetrics:
    cfg = prep.config
    pcfg = prep.pcfg
    fec_cfg = pcfg.fec_cfg
    ch = prep.channel_params
    rng = np.random.default_rng(seed)

    if cfg.channel.initial_state == "stationary":
        _, p_b = stationary(ch)
        state = ChannelState.B if rng.random() < p_b else ChannelState.G
    else:
        state = ChannelState[cfg.channel.initial_state]

    budget = prep.budget0
    sent3 = np.bincount(prep.pkt_type, minlength=3).astype(np.int64)
    lost3 = np.zeros(3)
    rec3 = np.zeros(3)
    frames_lost3 = np.zeros(3, dtype=np.int64)
    distortion_sum = 0.0
    parity_total = 0

    for f0, f1 in prep.windows:
        p0, p1 = prep.pkt_start[f0], prep.pkt_start[f1]
        n_data = int(p1 - p0)
        win_sizes = prep.sizes[f0:f1]
        local_start = prep.pkt_start[f0:f1] - p0

        # scheme decision
        n_rtp = prep.window_nominal[f1 - f0]
        if cfg.scheme == "va_ulp":
            dfs = DfsState(
                x=np.vstack((prep.types[f0:f1], prep.dists[f0:f1], win_sizes)),
                s=state,
                kind="I_DFS" if (prep.types[f0:f1] == 0).any() else "PB_DFS",
            )
            policy, budget = decide_va_ulp(dfs, budget, cfg.constants, pcfg, ch)
            blocks = [
                (int(local_start[a]), int(win_sizes[a : b + 1].sum()))
                for a, b in _contiguous_runs(list(policy.protected_indices()))
            ]
        elif cfg.scheme == "mp":
            dfs = DfsState(
                x=np.vstack((prep.types[f0:f1], prep.dists[f0:f1], win_sizes)),
                s=state,
                kind="I_DFS" if (prep.types[f0:f1] == 0).any() else "PB_DFS",
            )
            policy = decide_mp(dfs, n_rtp, rows_d=fec_cfg.rows_d)
            blocks = [
                (int(local_start[a]), int(win_sizes[a : b + 1].sum()))
                for a, b in _contiguous_runs(list(policy.protected_indices()))
            ]
        else:  # up
            prefix = decide_up(n_data, n_rtp, fec_cfg.rows_d)
            blocks = [(0, prefix)] if prefix > 0 else []

        # parity layout: groups of parity packets inserted after each matrix
        insert_after: list[int] = []
        group_sizes: list[int] = []
        block_ncols: list[list[int]] = []
        for bstart, z in blocks:
            ncols = []
            for mstart, count, width in matrix_layout(z, fec_cfg):
                cols = min(width, count)
                insert_after.append(bstart + mstart + count - 1)
                group_sizes.append(cols)
                ncols.append(cols)
            block_ncols.append(ncols)
        n_parity = sum(group_sizes)
        parity_total += n_parity

        # transmit through the channel
        if cfg.fec_lossless or n_parity == 0:
            m = n_data
            data_pos = None  # identity
        else:
            m = n_data + n_parity
            ia = np.asarray(insert_after)
            cum = np.concatenate(([0], np.cumsum(group_sizes)))
            data_pos = np.arange(n_data) + cum[np.searchsorted(ia, np.arange(n_data), side="left")]
        if m > 0:
            states, state = simulate_states(ch, state, rng.random(m))
            lost_chunk = states == 1
        else:
            lost_chunk = np.zeros(0, dtype=bool)
        lost_data = lost_chunk if data_pos is None else lost_chunk[data_pos]
        lost_data = lost_data[:n_data]

        # receiver-side repair, block by block
        recovered = np.zeros(n_data, dtype=bool)
        gi = 0
        for (bstart, z), ncols in zip(blocks, block_ncols):
            total_cols = sum(ncols)
            if cfg.fec_lossless:
                fec_lost = np.zeros(total_cols, dtype=bool)
            else:
                parts = []
                for cnt in ncols:
                    base = int(data_pos[insert_after[gi]]) + 1
                    parts.append(lost_chunk[base : base + cnt])
                    gi += 1
                fec_lost = np.concatenate(parts) if parts else np.zeros(0, dtype=bool)
            recovered[bstart : bstart + z] = recover_mask(
                lost_data[bstart : bstart + z], fec_lost, fec_cfg
            )

        # tallies
        tt = prep.pkt_type[p0:p1]
        lost3 += np.bincount(tt, weights=lost_data, minlength=3)
        rec3 += np.bincount(tt, weights=recovered, minlength=3)
        unrec = lost_data & ~recovered
        if unrec.any():
            fl = prep.pkt_frame[p0:p1] - f0
            bad = np.bincount(fl, weights=unrec, minlength=f1 - f0) > 0
            distortion_sum += float(prep.d_iw[f0:f1][bad].sum())
            frames_lost3 += np.bincount(prep.types[f0:f1][bad], minlength=3)

    lost3 = lost3.astype(np.int64)
    rec3 = rec3.astype(np.int64)

    def _stats(sent: int, lost: int, rec: int) -> TypeStats:
        zero = lost == 0
        return TypeStats(
            sent=int(sent),
            lost=int(lost),
            recovered=int(rec),
            recovery_rate=1.0 if zero else rec / lost,
            zero_loss=zero,
        )

    per_type = {
        t: _stats(sent3[i], lost3[i], rec3[i]) for i, t in enumerate(FRAME_TYPES)
    }
    duration = len(prep.trace.frames) / prep.trace.framerate
    fec_bits = parity_total * pcfg.l_pkt_fec
    return RunMetrics(
        seed=seed,
        per_type=per_type,
        overall=_stats(int(sent3.sum()), int(lost3.sum()), int(rec3.sum())),
        frames_effectively_lost={
            t: int(frames_lost3[i]) for i, t in enumerate(FRAME_TYPES)
        },
        distortion_proxy=distortion_sum,
        fec_packets_sent=parity_total,
        fec_bits_sent=fec_bits,
        fec_bitrate=fec_bits / duration,
        r_protection=prep.r_protection,
    )


def _run_task(args: tuple[ExperimentConfig, int]) -> RunMetrics:
    config, seed = args
    return _simulate_one(_Prepared(config, build_trace(config.stream)), seed)


def run(
    config: ExperimentConfig,
    trace: FrameTrace | None = None,
    workers: int = 1,
) -> RunResult:
    """Execute the experiment for every configured seed."""
    if trace is None:
        trace = build_trace(config.stream)
    prep = _Prepared(config, trace)
    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = tuple(
                pool.map(_run_task, [(config, s) for s in config.seeds])
            )
    else:
        runs = tuple(_simulate_one(prep, s) for s in config.seeds)
    return RunResult(
        scheme=config.scheme,
        channel=config.channel.label(),
        redundancy_rate=prep.redundancy_rate,
        r_protection=prep.r_protection,
        runs=runs,
    )


def sweep(
    base: ExperimentConfig,
    schemes: tuple[str, ...] = SCHEMES,
    redundancy_rates: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20),
    channels: tuple[ChannelSpec, ...] | None = None,
    workers: int = 1,
) -> list[RunResult]:
    """Cartesian product of schemes x redundancy rates x channels.

    All combinations share the same trace, so differences come only from
    the scheme and channel configuration.
    """
    channels = channels or (base.channel,)
    trace = build_trace(base.stream)
    results = []
    combos = [
        replace(base, scheme=s, redundancy_rate=r, r_protection=None, channel=c)
        for c in channels
        for r in redundancy_rates
        for s in schemes
    ]
    if workers > 1:
        tasks = [(cfg, seed) for cfg in combos for seed in cfg.seeds]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(_run_task, tasks, chunksize=4))
        i = 0
        for cfg in combos:
            runs = tuple(flat[i : i + len(cfg.seeds)])
            i += len(cfg.seeds)
            prep = _Prepared(cfg, trace)
            results.append(
                RunResult(
                    scheme=cfg.scheme,
                    channel=cfg.channel.label(),
                    redundancy_rate=prep.redundancy_rate,
                    r_protection=prep.r_protection,
                    runs=runs,
                )
            )
    else:
        for cfg in combos:
            results.append(run(cfg, trace=trace))
    return results


# --------------------------------------------------------------------------
# Reporting
# --------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def report(results: list[RunResult], outdir) -> tuple[str, str]:
    """Write recovery.csv and quality.csv; returns their paths.

    Output is byte-deterministic for identical inputs: fixed column order,
    fixed float formatting, rows in input order.
    """
    if not results:
        raise ValueError("no results to report")
    os.makedirs(outdir, exist_ok=True)
    rec_path = os.path.join(outdir, "recovery.csv")
    qual_path = os.path.join(outdir, "quality.csv")
    with open(rec_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "scheme,channel,redundancy,frame_type,mean_recovery,stddev,n_seeds,zero_loss_seeds\n"
        )
        for r in results:
            for t in (*FRAME_TYPES, None):
                label = t or "overall"
                vals = [
                    (m.per_type[t] if t else m.overall) for m in r.runs
                ]
                rates = [v.recovery_rate for v in vals]
                zero = sum(1 for v in vals if v.zero_loss)
                fh.write(
                    f"{r.scheme},{r.channel},{r.redundancy_rate:.4f},{label},"
                    f"{_fmt(float(np.mean(rates)))},{_fmt(float(np.std(rates)))},"
                    f"{len(vals)},{zero}\n"
                )
    with open(qual_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("scheme,channel,redundancy,mean_distortion_proxy,stddev,n_seeds\n")
        for r in results:
            fh.write(
                f"{r.scheme},{r.channel},{r.redundancy_rate:.4f},"
                f"{_fmt(r.mean_distortion())},{_fmt(r.std_distortion())},{len(r.runs)}\n"
            )
    return rec_path, qual_path


def metrics_to_json(results: list[RunResult], path) -> None:
    payload = [asdict(r) for r in results]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def metrics_from_json(path) -> list[RunResult]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    out = []
    for r in payload:
        runs = tuple(
            RunMetrics(
                seed=m["seed"],
                per_type={t: TypeStats(**sv) for t, sv in m["per_type"].items()},
                overall=TypeStats(**m["overall"]),
                frames_effectively_lost=m["frames_effectively_lost"],
                distortion_proxy=m["distortion_proxy"],
                fec_packets_sent=m["fec_packets_sent"],
                fec_bits_sent=m["fec_bits_sent"],
                fec_bitrate=m["fec_bitrate"],
                r_protection=m["r_protection"],
            )
            for m in r["runs"]
        )
        out.append(
            RunResult(
                scheme=r["scheme"],
                channel=r["channel"],
                redundancy_rate=r["redundancy_rate"],
                r_protection=r["r_protection"],
                runs=runs,
            )
        )
    return out
