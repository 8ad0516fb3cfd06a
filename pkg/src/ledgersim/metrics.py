"""Per-run measurements computed from an :class:`~ledgersim.engine.EventTrace`."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from enum import IntEnum

import numpy as np

from .chain import Block, BlockTree


class EventKind(IntEnum):
    MINED = 0
    PUBLISH = 1
    RELEASE = 2
    ABANDON = 3
    RECV = 4
    DUP = 5
    DROP = 6
    SEND = 7
    FAILSAFE = 8
    TRUNCATED = 9


@dataclass(frozen=True)
class MetricsRecord:
    attacker_blocks_total: int = 0
    attacker_blocks_main: int = 0
    main_chain_length: int = 0
    total_blocks: int = 0
    pct_main_by_attacker: float = 0.0
    pct_attacker_in_main: float = 0.0
    pct_total_by_attacker: float = 0.0
    selfish_episodes: int = 0
    coverage: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_FIELDS = tuple(f.name for f in fields(MetricsRecord))


def _pct(num: int, den: int) -> float:
    return 100.0 * num / den if den else 0.0


def global_tree(trace) -> BlockTree:
    """Omniscient tree of every published block.

    A block is published once an honest node has received it; its arrival key
    is that first honest receipt. Withheld blocks never enter this tree.
    """
    rows = trace.rows
    mined = rows[rows[:, 2] == EventKind.MINED]
    pub = rows[rows[:, 2] == EventKind.PUBLISH]
    arrival = dict(zip(pub[:, 5].tolist(), pub[:, 6].tolist()))
    tree = BlockTree(owner=None)
    height: dict[int, int] = {0: 0}
    for step, node, block_id, parent in zip(
        mined[:, 0].tolist(), mined[:, 3].tolist(), mined[:, 5].tolist(), mined[:, 6].tolist()
    ):
        h = height[parent] + 1
        height[block_id] = h
        if block_id in arrival:
            tree.insert(Block(block_id, parent, node, h, step), arrival[block_id])
    return tree


def attack51_metrics(trace, attacker: int) -> MetricsRecord:
    rows = trace.rows
    mined = rows[rows[:, 2] == EventKind.MINED]
    total = len(mined)
    if total == 0:
        return MetricsRecord()
    tree = global_tree(trace)
    main = tree.main_chain()[1:]  # genesis excluded
    if attacker < 0:
        return MetricsRecord(main_chain_length=len(main), total_blocks=total)
    att_total = int(np.count_nonzero(mined[:, 3] == attacker))
    att_main = sum(1 for b in main if tree.blocks[b].miner == attacker)
    releases = rows[(rows[:, 2] == EventKind.RELEASE) & (rows[:, 3] == attacker)]
    return MetricsRecord(
        attacker_blocks_total=att_total,
        attacker_blocks_main=att_main,
        main_chain_length=len(main),
        total_blocks=total,
        pct_main_by_attacker=_pct(att_main, len(main)),
        pct_attacker_in_main=_pct(att_main, att_total),
        pct_total_by_attacker=_pct(att_total, total),
        selfish_episodes=len(releases),
    )


def coverage_metric(trace, victim: int, sybils, n: int) -> float:
    """Fraction of honest, non-originator nodes that received the victim's probe."""
    sybils = {int(s) for s in sybils}
    denom = n - len(sybils) - 1
    if denom <= 0:
        raise ValueError("no potential receivers: every node is a sybil or the victim")
    rows = trace.rows
    recv = rows[rows[:, 2] == EventKind.RECV]
    probe_uid = trace.probe_uid
    got = {v for v, uid in zip(recv[:, 3].tolist(), recv[:, 5].tolist()) if uid == probe_uid}
    got.discard(victim)
    got -= sybils
    return len(got) / denom
