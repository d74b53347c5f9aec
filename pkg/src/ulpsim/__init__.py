"""Frame-aware unequal loss protection over simulated bursty channels.

The package splits into five layers:

- :mod:`ulpsim.channel`: two-state Markov loss channel, parameter fitting
  from target loss rate and burst length, reproducible loss patterns.
- :mod:`ulpsim.stream`: frame traces (type, size, GOP distance), synthetic
  generation, decision-window segmentation, trace file round-trip.
- :mod:`ulpsim.rtp`: one-frame-per-packet-run RTP encapsulation with a
  frame-label header extension, so receivers only parse headers.
- :mod:`ulpsim.fec`: interleaved XOR parity over matrices of consecutive
  packets, plus the matching loss repair.
- :mod:`ulpsim.engine` and :mod:`ulpsim.harness`: budget and reservation
  arithmetic, analytic loss likelihoods, the distortion-minimising
  protection scheme with two baselines, and the Monte-Carlo experiment
  driver with CSV reporting.
"""

from .channel import (
    ChannelParams,
    ChannelState,
    GilbertElliottChannel,
    derive_params,
    stationary,
)
from .engine import (
    BudgetState,
    DfsState,
    DistortionConstants,
    Policy,
    ProtectionConfig,
    decide_mp,
    decide_up,
    decide_va_ulp,
    dfs_cost,
    distortion,
    erf_inv,
    nominal_budget,
    p_burst,
    p_loss_protected,
    p_loss_unprotected,
    p_w_matrix,
    reservation,
    size_threshold,
)
from .fec import FecMatrixConfig, FecPacket, encode, fec_packet_count, n_matrices, recover
from .harness import ChannelSpec, ExperimentConfig, RunMetrics, RunResult, StreamSpec, report, run, sweep
from .rtp import FrameLabelExt, RtpPacket, packetize_frame, parse_header
from .stream import (
    Dfs,
    FrameMeta,
    FrameTrace,
    IFrameSizeStats,
    estimate_iframe_stats,
    generate_trace,
    load_trace,
    save_trace,
    segment_dfs,
)

__version__ = "0.1.0"
