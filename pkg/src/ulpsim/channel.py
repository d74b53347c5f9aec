"""Two-state bursty packet-loss channel.

The channel is a first-order Markov chain over {G, B}: a packet is received
iff the chain lands in G at its slot. Parameters are derived from a target
packet loss rate (PLR) and average burst length (ABL) with the usual
geometric-burst closure: the mean sojourn in B is ABL, and the entry rate
into B is solved from stationarity so that the long-run loss rate is PLR.

Randomness comes from numpy's PCG64 (``numpy.random.default_rng``); loss
patterns are reproducible across machines for a fixed (params, initial
state, seed) triple.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelState",
    "ChannelParams",
    "ChannelParamError",
    "GilbertElliottChannel",
    "derive_params",
    "stationary",
    "analytic_loss_stats",
    "measure_pattern",
]


class ChannelParamError(ValueError):
    """A PLR/ABL pair or transition probability is outside its domain."""


class ChannelState(enum.IntEnum):
    G = 0  # packet received
    B = 1  # packet lost


@dataclass(frozen=True)
class ChannelParams:
    """Transition probabilities plus the loss targets they were fitted to."""

    p_gg: float
    p_gb: float
    p_bg: float
    p_bb: float
    plr: float
    abl: float

    def __post_init__(self):
        for name in ("p_gg", "p_gb", "p_bg", "p_bb"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ChannelParamError(f"{name}={v} outside [0, 1]")
        if abs(self.p_gg + self.p_gb - 1.0) > 1e-12:
            raise ChannelParamError("G row not stochastic: p_gg + p_gb != 1")
        if abs(self.p_bg + self.p_bb - 1.0) > 1e-12:
            raise ChannelParamError("B row not stochastic: p_bg + p_bb != 1")


def derive_params(plr: float, abl: float) -> ChannelParams:
    """Fit transition probabilities to a target loss rate and burst length.

    p_bg = 1/abl gives geometric bursts of mean length abl; p_gb is then
    solved from stationarity so the long-run loss fraction equals plr.
    Rejects (plr, abl) pairs whose implied p_gb exceeds 1, i.e.
    plr > abl / (abl + 1). The boundary itself (p_gb = 1) is allowed and
    yields the deterministic alternating channel for plr=0.5, abl=1.
    """
    if not 0.0 < plr < 1.0:
        raise ChannelParamError(f"plr={plr} outside (0, 1)")
    if abl < 1.0:
        raise ChannelParamError(f"abl={abl} must be >= 1")
    p_bg = 1.0 / abl
    p_gb = plr * p_bg / (1.0 - plr)
    if p_gb > 1.0:
        raise ChannelParamError(
            f"plr={plr} too high for abl={abl}: implied p_gb={p_gb:.6g} > 1"
        )
    return ChannelParams(
        p_gg=1.0 - p_gb, p_gb=p_gb, p_bg=p_bg, p_bb=1.0 - p_bg, plr=plr, abl=abl
    )


def stationary(params: ChannelParams) -> tuple[float, float]:
    """Stationary probabilities (p_g, p_b) of the two states."""
    denom = params.p_gb + params.p_bg
    if denom == 0.0:
        raise ChannelParamError("degenerate chain: p_gb + p_bg = 0")
    p_b = params.p_gb / denom
    return 1.0 - p_b, p_b


def analytic_loss_stats(params: ChannelParams) -> tuple[float, float]:
    """Closed-form (plr, abl) implied by the transition probabilities."""
    _, p_b = stationary(params)
    return p_b, 1.0 / params.p_bg


class GilbertElliottChannel:
    """A channel instance bound to one set of transition probabilities.

    State is threaded explicitly through :meth:`step`, so one instance can
    serve many independent runs as long as each run carries its own state
    and RNG.
    """

    def __init__(self, params: ChannelParams):
        self.params = params

    def step(
        self, state: ChannelState, rng: np.random.Generator
    ) -> tuple[ChannelState, bool]:
        """Advance one packet slot. Returns (next_state, received)."""
        u = rng.random()
        if state == ChannelState.G:
            nxt = ChannelState.B if u < self.params.p_gb else ChannelState.G
        else:
            nxt = ChannelState.G if u < self.params.p_bg else ChannelState.B
        return nxt, nxt == ChannelState.G

    def draw_initial(self, rng: np.random.Generator) -> ChannelState:
        """Sample the initial state from the stationary distribution."""
        _, p_b = stationary(self.params)
        return ChannelState.B if rng.random() < p_b else ChannelState.G

    def simulate_pattern(
        self,
        n: int,
        initial: ChannelState | None = None,
        seed: int = 0,
    ) -> np.ndarray:
        """Loss pattern for n packets. True means the packet was lost.

        Deterministic for fixed (params, initial, seed). When initial is
        None it is drawn from the stationary distribution using the same
        seeded generator (one extra uniform before the walk).
        """
        rng = np.random.default_rng(seed)
        if initial is None:
            initial = self.draw_initial(rng)
        if n == 0:
            return np.zeros(0, dtype=bool)
        states, _ = simulate_states(self.params, initial, rng.random(n))
        return states == int(ChannelState.B)


def simulate_states(
    params: ChannelParams, initial: ChannelState, u: np.ndarray
) -> tuple[np.ndarray, ChannelState]:
    """Walk the chain over len(u) slots, one uniform per slot.

    Fully vectorised but draw-for-draw identical to stepping with
    :meth:`GilbertElliottChannel.step` on the same uniforms. Each draw acts
    as a map on states: below min(p_gb, p_bg) both states flip; between the
    two thresholds the chain resets to a fixed state regardless of history;
    above max(p_gb, p_bg) nothing moves. State at slot i is therefore the
    reset value (or the initial state before any reset) flipped once per
    interleaved swap, which reduces to cumulative-sum parity.

    Returns (states, final_state); states[i] is the state occupied at slot
    i, i.e. packet i is lost iff states[i] == B.
    """
    m = len(u)
    if m == 0:
        return np.zeros(0, dtype=np.int8), initial
    p_gb, p_bg = params.p_gb, params.p_bg
    lo, hi = min(p_gb, p_bg), max(p_gb, p_bg)
    reset_state = 0 if p_bg >= p_gb else 1  # 0 = G
    swaps = u < lo
    resets = (u >= lo) & (u < hi)
    cum = np.cumsum(swaps)
    idx = np.arange(m)
    last_reset = np.maximum.accumulate(np.where(resets, idx, -1))
    seen = last_reset >= 0
    base_parity = np.where(seen, cum[np.maximum(last_reset, 0)], 0)
    start = np.where(seen, reset_state, int(initial))
    states = ((start + cum - base_parity) % 2).astype(np.int8)
    return states, ChannelState(int(states[-1]))


def measure_pattern(pattern: np.ndarray) -> tuple[float, float]:
    """Empirical (plr, abl) of a loss pattern (True = lost).

    abl is the mean length of maximal runs of losses; nan when no losses.
    """
    pattern = np.asarray(pattern, dtype=bool)
    if pattern.size == 0:
        return 0.0, float("nan")
    plr = float(pattern.mean())
    padded = np.concatenate(([False], pattern, [False]))
    diff = np.diff(padded.astype(np.int8))
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    if len(starts) == 0:
        return plr, float("nan")
    return plr, float(np.mean(ends - starts))
