"""Dissemination protocols, duplicate suppression, TTL, and the stem fail-safe.

This module is the per-agent reference implementation. The engine runs the
same rules in array form (:mod:`ledgersim.kernels`); both consume the same
counter-based draws, so for equal inputs they emit identical copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

from .rng import Purpose, RandomStream


class Protocol(str, Enum):
    BROADCAST = "broadcast"
    FIXED_PROBABILITY = "fixed_probability"
    PROBABILISTIC_BROADCAST = "probabilistic_broadcast"
    DANDELION = "dandelion"
    DANDELION_PM = "dandelion_pm"

    @property
    def code(self) -> int:
        return _PROTOCOL_CODES[self]

    @property
    def is_dandelion(self) -> bool:
        return self in (Protocol.DANDELION, Protocol.DANDELION_PM)


_PROTOCOL_CODES = {p: i for i, p in enumerate(Protocol)}


class Phase(IntEnum):
    NONE = 0
    STEM = 1
    FLUFF = 2


class MessageKind(IntEnum):
    BLOCK = 0
    PROBE = 1


class Acceptance(str, Enum):
    FRESH = "fresh"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class Message:
    msg_id: int
    kind: MessageKind
    origin: int
    ttl: int
    hops: int = 0
    phase: Phase = Phase.NONE
    block_ref: int | None = None


@dataclass(frozen=True)
class ProtocolParams:
    protocol: Protocol = Protocol.BROADCAST
    p: float = 1.0
    stem_hops: int = 2
    failsafe_timeout: int = 20
    ttl_init: int = 16

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0,1]")
        if self.stem_hops < 1:
            raise ValueError("stem_hops must be >= 1")
        if self.failsafe_timeout < 1:
            raise ValueError("failsafe_timeout must be >= 1")
        if self.ttl_init < 1:
            raise ValueError("ttl_init must be >= 1")

    def initial_phase(self) -> Phase:
        return Phase.STEM if self.protocol.is_dandelion else Phase.NONE

    def label(self) -> str:
        proto = self.protocol
        if proto in (Protocol.FIXED_PROBABILITY, Protocol.PROBABILISTIC_BROADCAST):
            return f"{proto.value}:p={self.p:g}"
        if proto is Protocol.DANDELION:
            return f"{proto.value}:stem={self.stem_hops}"
        if proto is Protocol.DANDELION_PM:
            return f"{proto.value}:stem={self.stem_hops}:timeout={self.failsafe_timeout}"
        return proto.value


@dataclass
class GossipState:
    seen: set[int] = field(default_factory=set)
    # msg_id -> (deadline sub-step, stored copy)
    stem_pending: dict[int, tuple[int, Message]] = field(default_factory=dict)
    fluff_seen: set[int] = field(default_factory=set)


def accept(gs: GossipState, m: Message) -> Acceptance:
    if m.msg_id in gs.seen:
        return Acceptance.DUPLICATE
    gs.seen.add(m.msg_id)
    return Acceptance.FRESH


def note_fluff(gs: GossipState, m: Message) -> None:
    """Record that a fluff-phase copy of ``m`` was received (fresh or not)."""
    if m.phase == Phase.FLUFF:
        gs.fluff_seen.add(m.msg_id)


def _relay(m: Message, phase: Phase) -> Message:
    return replace(m, ttl=m.ttl - 1, hops=m.hops + 1, phase=phase)


def decide_forwards(
    params: ProtocolParams,
    self_id: int,
    m: Message,
    from_: int | None,
    nbrs: list[int],
    rng: RandomStream,
) -> list[tuple[int, Message]]:
    """Destinations and outgoing copies for one accepted message.

    ``nbrs`` must be the node's neighbor list in ascending order; the neighbor's
    index in that list is the counter used for per-neighbor coins.
    """
    if m.ttl <= 0 or not nbrs:
        return []
    proto = params.protocol
    if proto.is_dandelion and m.phase == Phase.STEM and m.hops < params.stem_hops:
        eligible = [i for i, w in enumerate(nbrs) if w != from_]
        if not eligible:
            slot = 0  # only neighbor is the forwarder
        else:
            u = rng.uniform(Purpose.STEM, m.msg_id)
            slot = eligible[min(int(u * len(eligible)), len(eligible) - 1)]
        return [(nbrs[slot], _relay(m, Phase.STEM))]

    phase = Phase.FLUFF if proto.is_dandelion else Phase.NONE
    out = _relay(m, phase)
    if proto is Protocol.PROBABILISTIC_BROADCAST:
        if rng.uniform(Purpose.FORWARD_ALL, m.msg_id) >= params.p:
            return []
        return [(w, out) for w in nbrs if w != from_]
    if proto is Protocol.FIXED_PROBABILITY:
        return [
            (w, out)
            for slot, w in enumerate(nbrs)
            if w != from_ and rng.uniform(Purpose.FORWARD_EACH, m.msg_id, slot) < params.p
        ]
    return [(w, out) for w in nbrs if w != from_]


def relays_in_stem(params: ProtocolParams, m: Message) -> bool:
    """True when a fresh ``m`` will be passed on as a stem relay."""
    return params.protocol.is_dandelion and m.phase == Phase.STEM and m.hops < params.stem_hops and m.ttl > 0


def stem_watch(gs: GossipState, m: Message, now: int, params: ProtocolParams) -> None:
    if params.protocol is not Protocol.DANDELION_PM or m.phase != Phase.STEM:
        return
    if m.msg_id in gs.stem_pending or m.msg_id in gs.fluff_seen:
        return
    gs.stem_pending[m.msg_id] = (now + params.failsafe_timeout, m)


def failsafe_tick(gs: GossipState, now: int) -> list[Message]:
    fired = []
    for msg_id in sorted(gs.stem_pending):
        deadline, copy = gs.stem_pending[msg_id]
        if deadline > now:
            continue
        del gs.stem_pending[msg_id]
        if msg_id not in gs.fluff_seen:
            fired.append(replace(copy, phase=Phase.FLUFF))
    return fired
