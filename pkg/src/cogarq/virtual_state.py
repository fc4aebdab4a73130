"""Compact virtual-system view of the chain-decoding protocol.

Instead of carrying the whole decoding graph, the SU can credit a chain's
worth of packets the moment the chain is formed, because the root is
retransmitted until it eventually succeeds.  The resulting state is just a
phase describing the virtual knowledge of the current PU packet, a counter
of SU packets pinned behind it, the tracked (t, d) of the primary ARQ
process, and a belief over the hidden PU queue.  This module provides the
per-slot virtual throughput, its expectation, the expected PU reward, and
the one-slot state transition, all of which the policy optimizer consumes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .channel import RegionProbabilities
from .pu_system import PuConfig, PuFeedback, completion_indicator, completion_probability

__all__ = [
    "CdPhase",
    "CompactState",
    "RewardVector",
    "REWARD_COMPONENTS",
    "ChainDecodingModel",
    "phase_from_flags",
    "phase_flags",
    "virtual_reward",
    "expected_virtual_reward",
    "expected_pu_reward",
    "next_belief",
    "transition",
    "translate_outcome",
    "point_belief",
]

BELIEF_DECIMALS = 12


class CdPhase(enum.Enum):
    U = "U"            # PU packet virtually unknown
    K_BIDIR = "K_BIDIR"  # virtually known, mutually tied to the root
    K_FWD = "K_FWD"      # virtually known, only reachable from the root

    def __repr__(self):
        return self.value


_PHASE_TO_FLAGS = {
    CdPhase.U: (0, 1),
    CdPhase.K_BIDIR: (1, 1),
    CdPhase.K_FWD: (1, 0),
}
_FLAGS_TO_PHASE = {v: k for k, v in _PHASE_TO_FLAGS.items()}


def phase_flags(phase: CdPhase) -> tuple[int, int]:
    """(virtual knowledge, openness) flag pair of a phase."""
    return _PHASE_TO_FLAGS[phase]


def phase_from_flags(kappa: int, iota: int) -> CdPhase:
    try:
        return _FLAGS_TO_PHASE[(kappa, iota)]
    except KeyError:
        raise ValueError(f"no phase maps to flags ({kappa}, {iota})") from None


def point_belief(q: int, q_max: int) -> tuple[float, ...]:
    b = [0.0] * (q_max + 1)
    b[q] = 1.0
    return tuple(b)


@dataclass(frozen=True)
class CompactState:
    """Information state (phase, b_s, t, d, belief) of the virtual system."""

    phase: CdPhase
    b_s: int
    t: int
    d: int
    belief: tuple[float, ...]

    def __post_init__(self):
        if self.b_s < 0:
            raise ValueError("b_s must be >= 0")
        if self.phase is not CdPhase.U and self.b_s != 0:
            raise ValueError(f"b_s must be 0 in phase {self.phase}")
        total = sum(self.belief)
        if abs(total - 1.0) > 1e-6 or any(p < -1e-12 for p in self.belief):
            raise ValueError("belief must be a probability vector")


REWARD_COMPONENTS = ("throughput", "power", "drops", "queue_delay")


@dataclass(frozen=True)
class RewardVector:
    """PU reward components; costs are negative."""

    throughput: float
    power: float
    drops: float
    queue_delay: float

    def component(self, name: str) -> float:
        if name not in REWARD_COMPONENTS:
            raise ValueError(f"unknown reward component {name!r}")
        return float(getattr(self, name))

    def as_array(self) -> np.ndarray:
        return np.array([self.throughput, self.power, self.drops, self.queue_delay])


# -- per-slot virtual throughput ----------------------------------------------


def virtual_reward(a_s: int, a_p: int, y: int, phase: CdPhase, b_s: int) -> int:
    """SU packets credited in one slot of the virtual system.

    Counts direct decodes under the phase's interference situation, the
    release of the b_s pinned packets when the PU packet stops being
    virtually unknown, and the root handovers peculiar to the mutually-tied
    phase.
    """
    if phase is not CdPhase.U and b_s != 0:
        raise ValueError(f"b_s={b_s} inconsistent with phase {phase}")
    kappa, iota = phase_flags(phase)
    g = a_s * (y in (1, 2, 5, 7))
    g -= (1 - kappa) * a_s * a_p * (y in (5, 7))
    g += a_p * (y in (1, 3, 6, 7)) * b_s
    g += iota * kappa * a_p * ((1 - a_s) * (y in (1, 3, 6, 7)) + a_s * (y in (1, 3)))
    g += iota * kappa * a_p * a_s * (y == 6)
    return int(g)


def _pu_transmit_prob(s: CompactState, cfg: PuConfig) -> float:
    return sum(
        w * cfg.transmit_prob(s.t, s.d, q) for q, w in enumerate(s.belief) if w > 0.0
    )


def expected_virtual_reward(
    s: CompactState, a_s: int, probs: RegionProbabilities, cfg: PuConfig
) -> float:
    """Expectation of `virtual_reward` over the outcome region and PU access."""
    p_tx = _pu_transmit_prob(s, cfg)
    pr = probs.as_array()
    total = 0.0
    for y in range(1, 8):
        p_y = pr[y - 1]
        if p_y == 0.0:
            continue
        total += p_y * (
            p_tx * virtual_reward(a_s, 1, y, s.phase, s.b_s)
            + (1.0 - p_tx) * virtual_reward(a_s, 0, y, s.phase, s.b_s)
        )
    return total


# -- expected PU reward ---------------------------------------------------------


def expected_pu_reward(
    s: CompactState,
    a_s: int,
    cfg: PuConfig,
    success_probs: tuple[float, float],
    pu_power: float = 1.0,
) -> RewardVector:
    """Belief- and policy-averaged one-slot PU reward.

    `success_probs` is (P(PU decodes | SU idle), P(PU decodes | SU active)).
    Throughput counts successful PU slots, power charges each transmission,
    drops charge buffer overflow, and queue_delay charges queue occupancy.
    """
    rho = success_probs[a_s]
    pmf = cfg.arrival_pmf
    thr = 0.0
    pow_ = 0.0
    drops = 0.0
    delay = 0.0
    for q, w in enumerate(s.belief):
        if w == 0.0:
            continue
        mu = cfg.transmit_prob(s.t, s.d, q)
        thr += w * mu * rho
        pow_ += w * mu
        delay += w * q
        for a_p, p_a in ((1, mu), (0, 1.0 - mu)):
            if p_a == 0.0:
                continue
            for o in (0, 1):
                p_o = completion_probability(s.t, s.d, q, a_p, rho, cfg)
                p_o = p_o if o == 1 else 1.0 - p_o
                if p_o == 0.0:
                    continue
                overflow = np.maximum(q - o + np.arange(pmf.size) - cfg.q_max, 0)
                drops += w * p_a * p_o * float(pmf @ overflow)
    return RewardVector(
        throughput=thr, power=-pu_power * pow_, drops=-drops, queue_delay=-delay
    )


# -- state transition -----------------------------------------------------------


def next_belief(
    t: int,
    d: int,
    belief: tuple[float, ...],
    o: int,
    success_prob: float,
    cfg: PuConfig,
) -> tuple[float, ...]:
    """Bayes update of the queue belief after observing completion o.

    Conditions on the completion indicator, marginalizing the PU access
    decision; `success_prob` is the PU decoding probability under the SU
    action taken this slot, which the completion odds depend on.
    """
    pmf = cfg.arrival_pmf
    num = np.zeros(cfg.q_max + 1)
    den = 0.0
    for q, w in enumerate(belief):
        if w == 0.0:
            continue
        mu = cfg.transmit_prob(t, d, q)
        p_o = mu * completion_probability(t, d, q, 1, success_prob, cfg) + (
            1.0 - mu
        ) * completion_probability(t, d, q, 0, success_prob, cfg)
        p_obs = p_o if o == 1 else 1.0 - p_o
        if p_obs == 0.0:
            continue
        den += w * p_obs
        for b, pb in enumerate(pmf):
            if pb > 0.0:
                num[min(q - o + b, cfg.q_max)] += w * p_obs * pb
    if den <= 0.0:
        raise ValueError(f"observed completion o={o} has zero probability under the belief")
    out = num / den
    out = np.round(out, BELIEF_DECIMALS)
    return tuple(out.tolist())


def transition(
    s: CompactState,
    a_s: int,
    y_p: PuFeedback,
    y_s: int,
    cfg: PuConfig,
    success_probs: tuple[float, float],
) -> CompactState:
    """One-slot update of the compact state from the two observed feedbacks."""
    a_p = 1 if y_p != PuFeedback.IDLE else 0
    o = completion_indicator(s.t, s.d, y_p, cfg)
    kappa, iota = phase_flags(s.phase)
    if o:
        kappa_n, iota_n, b_n = 0, 1, 0
    else:
        hit = a_p * (y_s in (1, 3, 6, 7))
        kappa_n = 1 - (1 - kappa) * (1 - hit)
        iota_n = iota * (1 - hit + a_p * a_s * (y_s == 7))
        b_n = (1 - hit) * (s.b_s + (1 - kappa) * a_p * a_s * (y_s == 5))
    t_n = (1 - o) * (s.t + a_p)
    d_n = (1 - o) * (s.d + (1 if s.t > 0 else a_p))
    belief_n = next_belief(s.t, s.d, s.belief, o, success_probs[a_s], cfg)
    return CompactState(phase_from_flags(kappa_n, iota_n), b_n, t_n, d_n, belief_n)


# -- scheme model for the policy optimizer ---------------------------------------


class ChainDecodingModel:
    """Phase machinery of the chain-decoding scheme, as the optimizer sees it.

    Phase tuples are (phase name, pinned-packet counter); the counter is
    bounded by the retransmission deadline because each PU packet is sent at
    most that many times.  On reachable states the cap is never hit (the
    counter stays below the tracked retransmission count); it only closes
    the product space over jointly-unreachable phase/ARQ combinations.
    """

    name = "chain_decoding"

    def __init__(self, cfg: PuConfig):
        self.b_cap = cfg.r_max - 1
        self._cfg = cfg

    def cd_states(self, cfg: PuConfig | None = None):
        cfg = cfg or self._cfg
        states = [(CdPhase.U.value, b) for b in range(cfg.r_max)]
        states.append((CdPhase.K_BIDIR.value, 0))
        states.append((CdPhase.K_FWD.value, 0))
        return states

    def initial_cd(self):
        return (CdPhase.U.value, 0)

    def reward(self, cd, a_s: int, a_p: int, y: int) -> int:
        return virtual_reward(a_s, a_p, y, CdPhase(cd[0]), cd[1])

    def next_cd(self, cd, a_s: int, a_p: int, y: int, o: int):
        if o:
            return (CdPhase.U.value, 0)
        kappa, iota = phase_flags(CdPhase(cd[0]))
        hit = a_p * (y in (1, 3, 6, 7))
        kappa_n = 1 - (1 - kappa) * (1 - hit)
        iota_n = iota * (1 - hit + a_p * a_s * (y == 7))
        b_n = (1 - hit) * (cd[1] + (1 - kappa) * a_p * a_s * (y == 5))
        return (phase_from_flags(kappa_n, iota_n).value, min(b_n, self.b_cap))


# -- always-transmit outcome translation ----------------------------------------

_TRANS_PU_ONLY_DECODE = frozenset({1, 3, 6, 7})
_TRANS_SU_ONLY_DECODE = frozenset({1, 2, 5, 7})


def translate_outcome(a_p: int, a_s: int, y: int) -> int:
    """Map a slot with possible idles onto the equivalent always-transmit slot.

    Idle sides are replaced by transmissions that decode nothing extra: a
    lone PU decode becomes region 3, a lone SU decode becomes region 2, and
    anything undecodable becomes region 4.  Slots where both sides already
    transmit are unchanged.  Every throughput and bound formula stated for
    the always-transmit system is evaluated on this translation.
    """
    if y not in (1, 2, 3, 4, 5, 6, 7):
        raise ValueError(f"outcome region must be in 1..7, got {y!r}")
    if a_p and a_s:
        return y
    if a_p and not a_s:
        return 3 if y in _TRANS_PU_ONLY_DECODE else 4
    if a_s and not a_p:
        return 2 if y in _TRANS_SU_ONLY_DECODE else 4
    return 4
