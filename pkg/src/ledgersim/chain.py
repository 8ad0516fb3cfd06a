"""Blocks, block trees, fork choice and the probabilistic mining model."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import Purpose, RandomStream, uniform_array

GENESIS_ID = 0
NO_PARENT = -1
NO_MINER = -1


@dataclass(frozen=True)
class Block:
    block_id: int
    parent: int
    miner: int
    height: int
    mined_step: int


GENESIS = Block(GENESIS_ID, NO_PARENT, NO_MINER, 0, -1)


def make_block_id(step: int, miner: int) -> int:
    """Deterministic id; a miner produces at most one block per mining step."""
    return ((step + 1) << 32) | miner


@dataclass(frozen=True)
class MiningParams:
    blocks_per_step: float = 0.5
    total_steps: int = 2000
    miner_fraction: float = 0.2

    def __post_init__(self):
        if not self.blocks_per_step > 0:
            raise ValueError("blocks_per_step must be > 0")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if not 0.0 < self.miner_fraction <= 1.0:
            raise ValueError("miner_fraction must lie in (0,1]")


def mining_probability(hashrate, params: MiningParams):
    prob = params.blocks_per_step * np.asarray(hashrate, dtype=np.float64)
    if np.any(prob > 1.0 + 1e-12):
        raise ValueError("blocks_per_step * hashrate exceeds 1; lower blocks_per_step")
    return prob


def mine_tick(hashrate: float, params: MiningParams, rng: RandomStream) -> bool:
    if not 0.0 <= hashrate <= 1.0:
        raise ValueError("hashrate must lie in [0,1]")
    prob = float(mining_probability(hashrate, params))
    return rng.uniform(Purpose.MINE) < prob


def mine_ticks(seed: int, nodes: np.ndarray, hashrates: np.ndarray, params: MiningParams, step: int) -> np.ndarray:
    """Vectorized :func:`mine_tick` for many miners in one mining step."""
    prob = mining_probability(hashrates, params)
    return uniform_array(seed, Purpose.MINE, nodes, step, 0) < prob


class InsertStatus(str, Enum):
    EXTENDED_BEST = "extended_best"
    FORK = "created_or_deepened_fork"
    DUPLICATE = "duplicate"
    ORPHAN = "orphan"


class BlockTree:
    """One node's view of the block tree.

    ``arrival`` holds the receipt sequence of each block (genesis is known
    before everything else). Blocks whose parent is unknown wait in an orphan
    buffer and are attached, with their original sequence, once it arrives.
    """

    def __init__(self, owner: int | None = None):
        self.owner = owner
        self.blocks: dict[int, Block] = {GENESIS_ID: GENESIS}
        self.children: dict[int, list[int]] = {GENESIS_ID: []}
        self.arrival: dict[int, int] = {GENESIS_ID: -1}
        self._own: dict[int, int] = {GENESIS_ID: 0}
        self._orphans: dict[int, list[tuple[Block, int]]] = {}
        self._orphan_ids: set[int] = set()
        self.max_height = 0
        self._frontier: list[int] = [GENESIS_ID]
        self._best: int | None = GENESIS_ID

    def __contains__(self, block_id: int) -> bool:
        return block_id in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def orphan_count(self) -> int:
        return len(self._orphan_ids)

    def insert(self, b: Block, seq: int) -> InsertStatus:
        if b.block_id in self.blocks or b.block_id in self._orphan_ids:
            return InsertStatus.DUPLICATE
        parent = self.blocks.get(b.parent)
        if parent is None:
            self._orphans.setdefault(b.parent, []).append((b, seq))
            self._orphan_ids.add(b.block_id)
            return InsertStatus.ORPHAN
        if b.height != parent.height + 1:
            raise ValueError(f"block {b.block_id} height {b.height} inconsistent with parent height {parent.height}")
        best = self.select_tip(self.owner)
        self._attach(b, seq)
        status = InsertStatus.EXTENDED_BEST if b.parent == best else InsertStatus.FORK
        waiting = [b.block_id]
        while waiting:
            for child, cseq in self._orphans.pop(waiting.pop(), []):
                self._orphan_ids.discard(child.block_id)
                if child.height != self.blocks[child.parent].height + 1:
                    continue
                self._attach(child, cseq)
                waiting.append(child.block_id)
        return status

    def _attach(self, b: Block, seq: int) -> None:
        self.blocks[b.block_id] = b
        self.children[b.block_id] = []
        self.children[b.parent].append(b.block_id)
        self.arrival[b.block_id] = seq
        self._own[b.block_id] = self._own[b.parent] + (1 if b.miner == self.owner else 0)
        if b.height > self.max_height:
            self.max_height = b.height
            self._frontier = [b.block_id]
            self._best = b.block_id
        elif b.height == self.max_height:
            self._frontier.append(b.block_id)
            if self._best is not None and self._tip_key(b.block_id) < self._tip_key(self._best):
                self._best = b.block_id

    def _tip_key(self, t: int) -> tuple:
        return (-self._own[t], self.arrival[t], t)

    def own_count(self, tip: int, self_id: int | None) -> int:
        """Blocks mined by ``self_id`` on the genesis-to-``tip`` path."""
        if self_id is None:
            return 0
        if self_id == self.owner:
            return self._own[tip]
        count = 0
        while tip != NO_PARENT:
            b = self.blocks[tip]
            count += b.miner == self_id
            tip = b.parent
        return count

    def select_tip(self, self_id: int | None = None) -> int:
        if self_id == self.owner and self._best is not None:
            return self._best
        best = min(
            self._frontier,
            key=lambda t: (-self.own_count(t, self_id), self.arrival[t], t),
        )
        if self_id == self.owner:
            self._best = best
        return best

    def path(self, tip: int) -> list[int]:
        out = []
        while tip != NO_PARENT:
            out.append(tip)
            tip = self.blocks[tip].parent
        return out[::-1]

    def main_chain(self) -> list[int]:
        return self.path(self.select_tip(None))

    def dump(self, path: str | Path) -> None:
        lines = [
            f"{b.block_id} {b.parent} {b.miner} {b.height} {b.mined_step}"
            for b in sorted(self.blocks.values(), key=lambda b: (b.height, b.block_id))
        ]
        Path(path).write_text("\n".join(lines) + "\n")


def insert_block(t: BlockTree, b: Block, seq: int) -> InsertStatus:
    return t.insert(b, seq)


def select_tip(t: BlockTree, self_id: int | None) -> int:
    """Max-height tip; ties: most ``self_id`` blocks on the path, earliest arrival, smallest id."""
    return t.select_tip(self_id)


def main_chain(t: BlockTree) -> list[int]:
    return t.main_chain()
