"""Packet-selection rules for the SU transmitter.

Whenever the access policy says transmit, the SU either sends a fresh
packet or retransmits the root of the decoding graph, never anything else.
The choice depends only on whether the upcoming PU packet is already known
at the SU receiver and on its reachability relationship with the root.  At
the start of every primary ARQ cycle the graph is trimmed down to what the
root can still release.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cd_graph import CdGraph, PacketLabel, prune_unreachable, reachable, root, su

__all__ = ["FRESH", "ROOT_RETX", "LabelDecision", "select_label", "on_new_cycle"]

FRESH = "FRESH"
ROOT_RETX = "ROOT_RETX"


@dataclass(frozen=True)
class LabelDecision:
    label: PacketLabel
    kind: str

    def __post_init__(self):
        if self.kind not in (FRESH, ROOT_RETX):
            raise ValueError(f"unknown decision kind {self.kind!r}")


def select_label(g: CdGraph, l_p: PacketLabel, pu_known: int, n: int) -> LabelDecision:
    """Choose the SU label for slot n given the prospective PU label.

    Known PU packet: retransmit the root, its interference will be
    pre-cancelled.  Unknown and disconnected from the root in both
    directions: retransmit the root to try to hook the PU packet into the
    graph.  Unknown but connected in either direction: send a fresh packet,
    the connection already carries the root's potential.
    """
    if n != g.slot:
        raise ValueError(f"graph is at slot {g.slot}, not {n}")
    rt, _ = root(g)
    if pu_known:
        choice = rt
    else:
        linked = reachable(g, rt, l_p) or reachable(g, l_p, rt)
        choice = su(n) if linked else rt
    kind = FRESH if choice == su(n) else ROOT_RETX
    return LabelDecision(choice, kind)


def on_new_cycle(g: CdGraph) -> int:
    """Trim the graph to the root's closure; returns SU packets discarded."""
    rt, _ = root(g)
    return prune_unreachable(g, rt)
