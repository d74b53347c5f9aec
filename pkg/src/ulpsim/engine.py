"""Protection decision engine: budgets, loss likelihoods, and schemes.

Per decision window (DFS) the engine picks which frames to protect. The
smart scheme minimises expected distortion subject to a parity budget,
reserving part of every PB window's budget so that upcoming I-frames,
which rarely fit the plain per-window budget, can be covered. Two
baselines are included: a type-priority greedy (``decide_mp``) and a
uniform prefix protector (``decide_up``).

Loss likelihoods come from the two-state channel model. For protected
frames the model assumes losses arrive as a single burst per protection
matrix and sums, over burst lengths exceeding the column count, the exact
probability of such a burst. Those closed forms are validated in the test
suite against brute-force enumeration of every channel realisation.

Budget accounting charges each protected frame its column-padded size
(rows_d * ceil(z / rows_d)): that is the data-packet equivalent of the
parity the frame actually consumes, which keeps the realised FEC bitrate
inside the configured ceiling.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erfinv as _scipy_erfinv

from .channel import ChannelParams, ChannelState
from .fec import FecMatrixConfig, n_matrices
from .stream import Dfs, FrameMeta, IFrameSizeStats

__all__ = [
    "ProtectionConfig",
    "NominalBudget",
    "BudgetState",
    "DistortionConstants",
    "DfsState",
    "Policy",
    "nominal_budget",
    "erf_inv",
    "size_threshold",
    "reservation",
    "make_budget_state",
    "estimate_fec_packet_bits",
    "distortion",
    "p_loss_unprotected",
    "p_burst",
    "p_w_matrix",
    "p_loss_protected",
    "dfs_cost",
    "padded_size",
    "decide_va_ulp",
    "decide_mp",
    "decide_up",
]

_TYPE_CODE = {"I": 0, "P": 1, "B": 2}


@dataclass(frozen=True)
class ProtectionConfig:
    r_protection: float  # parity bitrate, bit/s
    framerate: float  # source frame rate, frames/s
    n_frames_dfs: int
    fec_cfg: FecMatrixConfig
    l_pkt_fec: float  # average parity packet length, bits
    l_pkt_data: float  # average data packet length, bits
    p_coverage: float = 95.0  # percent of I-frames the reservation must cover

    def __post_init__(self):
        if min(self.r_protection, self.framerate, self.l_pkt_fec, self.l_pkt_data) <= 0:
            raise ValueError("rates and packet lengths must be positive")
        if self.n_frames_dfs < 1:
            raise ValueError("n_frames_dfs must be >= 1")
        if not 0.0 < self.p_coverage < 100.0:
            raise ValueError("p_coverage must be in (0, 100)")


@dataclass(frozen=True)
class NominalBudget:
    n_bit_fec: float
    n_pkt_fec: int
    n_pkt_rtp: int


@dataclass(frozen=True)
class BudgetState:
    """Per-stream budget bookkeeping threaded through the window decisions."""

    n_pkt_fec_nominal: int
    n_pkt_rtp_nominal: int
    n_pkt_rtp_reserved_per_pbdfs: int
    reserve_pool: int = 0


@dataclass(frozen=True)
class DistortionConstants:
    """Weights of the frame-importance model: a per-type base plus linear
    terms in GOP distance and frame size. Defaults are tuning constants,
    not measurements."""

    k1_i: float = 100.0
    k1_p: float = 40.0
    k1_b: float = 10.0
    k2: float = 2.0
    k3: float = 0.1

    def __post_init__(self):
        if not self.k1_i > self.k1_p > self.k1_b >= 0:
            raise ValueError("need k1_i > k1_p > k1_b >= 0")
        if self.k2 < 0 or self.k3 < 0:
            raise ValueError("k2 and k3 must be >= 0")

    def k1(self, frame_type: str) -> float:
        return (self.k1_i, self.k1_p, self.k1_b)[_TYPE_CODE[frame_type]]


@dataclass(frozen=True)
class Policy:
    """Per-frame protect bits for one decision window."""

    bits: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.bits)

    def protected_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)


@dataclass(frozen=True)
class DfsState:
    """Coding features of one window plus the channel state it opens in.

    x stacks the three feature rows (type code, distance to GOP end, size
    in packets); column i describes the i-th frame.
    """

    x: np.ndarray
    s: ChannelState
    kind: str

    @classmethod
    def from_dfs(cls, dfs: Dfs, s: ChannelState) -> "DfsState":
        return cls.from_frames(dfs.frames, s, dfs.kind)

    @classmethod
    def from_frames(cls, frames, s: ChannelState, kind: str | None = None) -> "DfsState":
        x = np.array(
            [
                [_TYPE_CODE[f.frame_type] for f in frames],
                [f.dist_to_gop_end for f in frames],
                [f.size_packets for f in frames],
            ],
            dtype=np.int64,
        ).reshape(3, len(frames))
        if kind is None:
            kind = "I_DFS" if any(f.frame_type == "I" for f in frames) else "PB_DFS"
        return cls(x=x, s=s, kind=kind)

    @property
    def n_frames(self) -> int:
        return self.x.shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return self.x[2]


# --------------------------------------------------------------------------
# Budget arithmetic
# --------------------------------------------------------------------------


def nominal_budget(cfg: ProtectionConfig, dfs_len: int) -> NominalBudget:
    """Budget an evenly-split protection bitrate grants one window.

    dfs_len is the actual window length, so a short tail window gets a
    proportionally smaller budget. Each parity packet covers one column of
    rows_d data packets, hence the protectable-data figure.
    """
    if dfs_len < 1:
        raise ValueError("dfs_len must be >= 1")
    n_bit_fec = cfg.r_protection / cfg.framerate * dfs_len
    n_pkt_fec = int(n_bit_fec // cfg.l_pkt_fec)
    return NominalBudget(
        n_bit_fec=n_bit_fec,
        n_pkt_fec=n_pkt_fec,
        n_pkt_rtp=cfg.fec_cfg.rows_d * n_pkt_fec,
    )


def erf_inv(y: float) -> float:
    """Inverse error function on (-1, 1)."""
    if not -1.0 < y < 1.0:
        raise ValueError(f"erf_inv domain is (-1, 1), got {y}")
    return float(_scipy_erfinv(y))


def size_threshold(stats: IFrameSizeStats, p: float) -> float:
    """Size (packets) that p percent of I-frames fall at or below,
    under a Gaussian fit of the observed I-frame sizes."""
    if not 0.0 < p < 100.0:
        raise ValueError(f"p must be in (0, 100), got {p}")
    return stats.mu + np.sqrt(2.0) * stats.sigma * erf_inv(2.0 * (p / 100.0) - 1.0)


def reservation(
    cfg: ProtectionConfig, stats: IFrameSizeStats, l_gop: float
) -> tuple[int, int]:
    """Packets each PB window must set aside for the next I window.

    The threshold spreads a p_coverage-quantile I-frame over the PB
    windows of one GOP (there are l_gop / n_frames_dfs - 1 of them); the
    actual reservation is capped by the nominal per-window budget.
    Returns (n_pkt_rtp_threshold, n_pkt_rtp_reserved).
    """
    if l_gop <= cfg.n_frames_dfs:
        raise ValueError(
            f"gop length {l_gop} must exceed n_frames_dfs={cfg.n_frames_dfs}"
        )
    l_pct = size_threshold(stats, cfg.p_coverage)
    pb_windows_per_gop = l_gop / cfg.n_frames_dfs - 1.0
    threshold = max(0, int(np.ceil(l_pct / pb_windows_per_gop)))
    nominal = nominal_budget(cfg, cfg.n_frames_dfs).n_pkt_rtp
    return threshold, min(threshold, nominal)


def make_budget_state(
    cfg: ProtectionConfig, stats: IFrameSizeStats, l_gop: float
) -> BudgetState:
    nb = nominal_budget(cfg, cfg.n_frames_dfs)
    _, reserved = reservation(cfg, stats, l_gop)
    return BudgetState(
        n_pkt_fec_nominal=nb.n_pkt_fec,
        n_pkt_rtp_nominal=nb.n_pkt_rtp,
        n_pkt_rtp_reserved_per_pbdfs=reserved,
        reserve_pool=0,
    )


def estimate_fec_packet_bits(
    data_packet_bits, window: int = 100, header_bytes: int = 12
) -> float:
    """Average parity packet length: mean data packet length over the
    first `window` packets plus the parity header."""
    arr = np.asarray(list(data_packet_bits)[:window], dtype=float)
    if arr.size == 0:
        raise ValueError("need at least one data packet to estimate")
    return float(arr.mean() + header_bytes * 8)


# --------------------------------------------------------------------------
# Distortion and loss likelihoods
# --------------------------------------------------------------------------


def distortion(frame: FrameMeta, k: DistortionConstants) -> float:
    """Quality penalty if this frame is effectively lost."""
    return k.k1(frame.frame_type) + k.k2 * frame.dist_to_gop_end + k.k3 * frame.size_packets


def p_loss_unprotected(s: ChannelState, z: int, ch: ChannelParams) -> float:
    """Probability that an unprotected z-packet frame loses >= 1 packet,
    given the state the channel was in after the previous packet."""
    if z < 1:
        raise ValueError("z must be >= 1")
    if s == ChannelState.G:
        return 1.0 - ch.p_gg**z
    return 1.0 - ch.p_bg * ch.p_gg ** (z - 1)


def p_burst(s: ChannelState, n: int, cfg: FecMatrixConfig, ch: ChannelParams) -> float:
    """Probability of a single loss burst of exactly n packets inside one
    D*L-packet matrix, given the prior channel state.

    Computed as the sum over burst placements (opening, interior, closing
    the matrix), grouped so no negative power of p_gg ever appears; the
    grouped form is algebraically identical to the usual closed forms
    where those are defined. Verified against exhaustive enumeration.
    """
    dl = cfg.capacity
    if not 1 <= n <= dl:
        raise ValueError(f"burst length {n} outside [1, {dl}]")
    p_gg, p_gb, p_bg, p_bb = ch.p_gg, ch.p_gb, ch.p_bg, ch.p_bb
    if s == ChannelState.G:
        # burst not at the end: (dl - n) placements; burst flush at the end
        interior = (dl - n) * p_bg * p_gg ** (dl - n - 1) if n < dl else 0.0
        return p_gb * p_bb ** (n - 1) * (interior + p_gg ** (dl - n))
    if n == dl:
        return p_bb**dl
    # prior loss continues into the matrix / burst strictly inside / at the end
    start = p_bb**n * p_bg * p_gg ** (dl - n - 1)
    interior = (
        (dl - n - 1) * p_bg**2 * p_gb * p_bb ** (n - 1) * p_gg ** (dl - n - 2)
        if n < dl - 1
        else 0.0
    )
    end = p_bg * p_gb * p_bb ** (n - 1) * p_gg ** (dl - n - 1)
    return start + interior + end


@functools.lru_cache(maxsize=None)
def p_w_matrix(s: ChannelState, cfg: FecMatrixConfig, ch: ChannelParams) -> float:
    """Probability that one matrix suffers an uncorrectable burst, i.e. a
    single burst longer than the column count."""
    return float(
        sum(p_burst(s, n, cfg, ch) for n in range(cfg.cols_l + 1, cfg.capacity + 1))
    )


def p_loss_protected(
    s: ChannelState, z: int, cfg: FecMatrixConfig, ch: ChannelParams
) -> float:
    """Probability that a protected z-packet frame cannot be fully
    repaired: matrices fail independently and rarely, so the per-matrix
    failure probability scales with the matrix count (clamped to 1)."""
    return min(1.0, n_matrices(z, cfg) * p_w_matrix(s, cfg, ch))


def padded_size(z: int, rows_d: int) -> int:
    """Data-packet budget charge of protecting a z-packet frame: z rounded
    up to whole columns, the coverage its parity packets actually buy."""
    return rows_d * -(-z // rows_d)


def _loss_prob_arrays(
    dfs: DfsState, cfg: ProtectionConfig, ch: ChannelParams
) -> tuple[np.ndarray, np.ndarray]:
    z = dfs.sizes.astype(np.float64)
    if dfs.s == ChannelState.G:
        p_unprot = 1.0 - ch.p_gg**z
    else:
        p_unprot = 1.0 - ch.p_bg * ch.p_gg ** (z - 1.0)
    pwm = p_w_matrix(dfs.s, cfg.fec_cfg, ch)
    mats = np.ceil(z / cfg.fec_cfg.capacity)
    p_prot = np.minimum(1.0, mats * pwm)
    return p_unprot, p_prot


def _distortion_array(dfs: DfsState, k: DistortionConstants) -> np.ndarray:
    k1 = np.array([k.k1_i, k.k1_p, k.k1_b])[dfs.x[0]]
    return k1 + k.k2 * dfs.x[1] + k.k3 * dfs.x[2]


def dfs_cost(
    dfs: DfsState,
    pi: Policy,
    k: DistortionConstants,
    cfg: ProtectionConfig,
    ch: ChannelParams,
) -> float:
    """Expected distortion of the window under a protect/skip policy: each
    frame contributes its loss penalty weighted by the loss likelihood of
    its branch, all conditioned on the window's opening channel state."""
    if len(pi) != dfs.n_frames:
        raise ValueError("policy length does not match window")
    if dfs.n_frames == 0:
        return 0.0
    p_unprot, p_prot = _loss_prob_arrays(dfs, cfg, ch)
    d_iw = _distortion_array(dfs, k)
    bits = np.asarray(pi.bits, dtype=bool)
    return float(np.sum(d_iw * np.where(bits, p_prot, p_unprot)))


# --------------------------------------------------------------------------
# Scheme deciders
# --------------------------------------------------------------------------


@functools.lru_cache(maxsize=32)
def _mask_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(2^n, n) membership matrix and the earlier-frame preference rank."""
    masks = np.arange(2**n, dtype=np.uint32)
    members = (masks[:, None] >> np.arange(n)) & 1
    # Higher weight on earlier frames: among equal cost and packet count,
    # prefer the policy whose earliest differing frame is protected.
    msb_weight = members @ (1 << np.arange(n - 1, -1, -1, dtype=np.int64))
    return members.astype(np.float64), -msb_weight


def decide_va_ulp(
    dfs: DfsState,
    budget: BudgetState,
    k: DistortionConstants,
    cfg: ProtectionConfig,
    ch: ChannelParams,
) -> tuple[Policy, BudgetState]:
    """Pick the feasible policy of minimum expected distortion.

    PB windows first set aside the reservation (it accrues in the pool),
    then spend what is left; an I window spends its own budget plus the
    whole pool, which then resets. The search is exhaustive over the 2^n
    policies; ties go to fewer protected packets, then to protecting
    earlier frames. The all-zero policy is always feasible.
    """
    n = dfs.n_frames
    if n == 0:
        return Policy(bits=()), budget
    if n > 20:
        raise ValueError("window too large for exhaustive policy search")

    if n == cfg.n_frames_dfs:
        n_rtp = budget.n_pkt_rtp_nominal
    else:
        n_rtp = nominal_budget(cfg, n).n_pkt_rtp

    if dfs.kind == "PB_DFS":
        reserved = min(budget.n_pkt_rtp_reserved_per_pbdfs, n_rtp)
        available = n_rtp - reserved
        new_budget = replace(budget, reserve_pool=budget.reserve_pool + reserved)
    else:
        available = n_rtp + budget.reserve_pool
        new_budget = replace(budget, reserve_pool=0)

    p_unprot, p_prot = _loss_prob_arrays(dfs, cfg, ch)
    d_iw = _distortion_array(dfs, k)
    delta = d_iw * (p_prot - p_unprot)  # cost change when a frame is protected
    z = dfs.sizes
    charge = cfg.fec_cfg.rows_d * -(-z // cfg.fec_cfg.rows_d)

    members, msb_rank = _mask_tables(n)
    costs = members @ delta  # common unprotected base omitted: argmin unchanged
    feasible = members @ charge.astype(np.float64) <= available
    costs = np.where(feasible, costs, np.inf)
    packet_counts = members @ z.astype(np.float64)
    best = int(np.lexsort((msb_rank, packet_counts, costs))[0])

    bits = tuple(bool((best >> i) & 1) for i in range(n))
    return Policy(bits=bits), new_budget


def decide_mp(dfs: DfsState, n_pkt_rtp_budget: int, rows_d: int = 1) -> Policy:
    """Type-priority greedy: whole I-frames first, then P-frames from the
    farthest to the closest to the GOP end, then B-frames likewise. A
    frame too large for the remaining budget is skipped and later smaller
    frames may still be taken. No reservation across windows."""
    n = dfs.n_frames
    order = sorted(
        range(n),
        key=lambda i: (dfs.x[0, i], -dfs.x[1, i], i),
    )
    bits = [False] * n
    spent = 0
    for i in order:
        charge = padded_size(int(dfs.x[2, i]), rows_d)
        if spent + charge <= n_pkt_rtp_budget:
            bits[i] = True
            spent += charge
    return Policy(bits=tuple(bits))


def decide_up(packet_count_in_dfs: int, n_pkt_rtp_budget: int, rows_d: int) -> int:
    """Uniform protection: cover the leading packets of the window. When
    the budget binds it is rounded down to whole parity columns; when the
    whole window fits, everything is covered (the final column may be
    short). No prioritisation of any kind."""
    if n_pkt_rtp_budget >= packet_count_in_dfs:
        return packet_count_in_dfs
    return n_pkt_rtp_budget - n_pkt_rtp_budget % rows_d
