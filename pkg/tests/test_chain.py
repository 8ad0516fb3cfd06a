import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ledgersim.chain import (
    GENESIS_ID,
    Block,
    BlockTree,
    InsertStatus,
    MiningParams,
    insert_block,
    main_chain,
    make_block_id,
    mine_tick,
    mine_ticks,
    select_tip,
)
from ledgersim.rng import RandomStream


def blk(bid, parent, height, miner=1, step=0):
    return Block(bid, parent, miner, height, step)


def chain_of(tree, ids, parent=GENESIS_ID, start_height=1, miner=1, seq0=0):
    for i, bid in enumerate(ids):
        tree.insert(blk(bid, parent, start_height + i, miner), seq0 + i)
        parent = bid
    return parent


def test_mine_tick_certain_and_never():
    params = MiningParams(blocks_per_step=1.0)
    assert all(mine_tick(1.0, params, RandomStream(1, 0, s)) for s in range(100))
    assert not any(mine_tick(0.0, params, RandomStream(1, 0, s)) for s in range(100))


def test_mine_tick_half():
    params = MiningParams(blocks_per_step=0.5)
    hits = mine_ticks(3, np.zeros(1, dtype=np.int64), np.array([1.0]), params, 0)
    rate = np.mean([mine_ticks(3, np.array([0]), np.array([1.0]), params, s)[0] for s in range(20000)])
    assert hits.dtype == bool
    assert abs(rate - 0.5) < 3 * np.sqrt(0.25 / 20000)


def test_mine_tick_rate_point_two():
    params = MiningParams(blocks_per_step=0.5)
    steps = 100_000
    hits = sum(mine_ticks(8, np.array([4]), np.array([0.2]), params, s)[0] for s in range(steps))
    assert abs(hits / steps - 0.100) <= 0.003


def test_mine_tick_scalar_matches_vector():
    params = MiningParams()
    for s in range(500):
        assert mine_tick(0.3, params, RandomStream(5, 7, s)) == mine_ticks(5, np.array([7]), np.array([0.3]), params, s)[0]


def test_mine_tick_rejects_overload():
    with pytest.raises(ValueError):
        mine_tick(0.8, MiningParams(blocks_per_step=2.0), RandomStream(1, 0))
    with pytest.raises(ValueError):
        mine_tick(1.5, MiningParams(), RandomStream(1, 0))


@pytest.mark.parametrize("kw", [{"blocks_per_step": 0}, {"total_steps": -1}, {"miner_fraction": 0}, {"miner_fraction": 1.2}])
def test_mining_params_validation(kw):
    with pytest.raises(ValueError):
        MiningParams(**kw)


def test_block_ids_unique_per_step_and_miner():
    ids = {make_block_id(s, m) for s in range(100) for m in range(100)}
    assert len(ids) == 10_000 and GENESIS_ID not in ids


def test_insert_statuses():
    t = BlockTree(owner=1)
    assert t.insert(blk(10, 0, 1), 0) is InsertStatus.EXTENDED_BEST
    assert t.insert(blk(11, 10, 2), 1) is InsertStatus.EXTENDED_BEST
    assert t.insert(blk(12, 10, 2), 2) is InsertStatus.FORK
    before = dict(t.blocks)
    assert insert_block(t, blk(12, 10, 2), 3) is InsertStatus.DUPLICATE
    assert t.blocks == before and t.arrival[12] == 2


def test_insert_rejects_bad_height():
    t = BlockTree()
    with pytest.raises(ValueError):
        t.insert(blk(10, 0, 2), 0)


def test_orphans_attach_when_parent_arrives():
    t = BlockTree(owner=1)
    assert t.insert(blk(12, 11, 2), 5) is InsertStatus.ORPHAN
    assert t.insert(blk(13, 12, 3), 6) is InsertStatus.ORPHAN
    assert t.insert(blk(13, 12, 3), 7) is InsertStatus.DUPLICATE
    assert 12 not in t and t.orphan_count == 2
    t.insert(blk(11, 0, 1), 9)
    assert t.orphan_count == 0
    assert main_chain(t) == [0, 11, 12, 13]
    assert t.arrival[13] == 6


def test_select_tip_single_chain():
    t = BlockTree()
    chain_of(t, [1, 2, 3, 4, 5])
    assert select_tip(t, 9) == 5


def test_select_tip_prefers_own_blocks():
    t = BlockTree(owner=7)
    # branch B (no own blocks) arrives first; branch A holds 2 blocks by node 7
    t.insert(blk(20, 0, 1, miner=2), 0)
    t.insert(blk(21, 20, 2, miner=2), 1)
    t.insert(blk(22, 21, 3, miner=2), 2)
    t.insert(blk(30, 0, 1, miner=7), 3)
    t.insert(blk(31, 30, 2, miner=7), 4)
    t.insert(blk(32, 31, 3, miner=3), 5)
    assert select_tip(t, 7) == 32
    assert select_tip(t, 2) == 22
    assert select_tip(t, 99) == 22  # equal counts: earliest receipt


def test_select_tip_arrival_then_id():
    t = BlockTree()
    t.insert(blk(50, 0, 1), 3)
    t.insert(blk(40, 0, 1), 1)
    assert select_tip(t, None) == 40
    t2 = BlockTree()
    t2.insert(blk(50, 0, 1), 1)
    t2.insert(blk(40, 0, 1), 1)
    assert select_tip(t2, None) == 40


def test_main_chain_examples():
    assert main_chain(BlockTree()) == [GENESIS_ID]
    t = BlockTree()
    tip = chain_of(t, list(range(1, 11)))
    chain_of(t, [101, 102, 103], parent=3, start_height=4, seq0=50)
    assert main_chain(t) == list(range(0, tip + 1))
    f = BlockTree()
    f.insert(blk(1, 0, 1), 0)
    f.insert(blk(2, 1, 2), 2)
    f.insert(blk(3, 1, 2), 1)
    assert main_chain(f) == [0, 1, 3]


def brute_tip(blocks, arrival, self_id):
    """Reference fork choice by full enumeration."""
    def path(b):
        out = []
        while b != -1:
            out.append(b)
            b = blocks[b].parent
        return out

    hmax = max(b.height for b in blocks.values())
    tips = [b for b, x in blocks.items() if x.height == hmax]
    return min(tips, key=lambda t: (-sum(blocks[p].miner == self_id for p in path(t)), arrival[t], t))


@st.composite
def random_trees(draw):
    n = draw(st.integers(1, 25))
    out = []
    heights = {0: 0}
    for i in range(n):
        parent = draw(st.sampled_from(sorted(heights)))
        bid = 1000 + i
        heights[bid] = heights[parent] + 1
        out.append(Block(bid, parent, draw(st.integers(0, 3)), heights[bid], i))
    seqs = draw(st.permutations(range(n)))
    order = draw(st.permutations(range(n)))
    return out, seqs, order


@given(random_trees(), st.integers(0, 3))
def test_select_tip_matches_brute_force(tree, self_id):
    blocks, seqs, order = tree
    t = BlockTree(owner=self_id)
    for i in order:  # any insertion order, orphans included
        t.insert(blocks[i], seqs[i])
    assert t.orphan_count == 0
    arrival = {b.block_id: seqs[i] for i, b in enumerate(blocks)}
    arrival[0] = -1
    assert select_tip(t, self_id) == brute_tip(t.blocks, arrival, self_id)
    other = BlockTree(owner=None)
    for i in order:
        other.insert(blocks[i], seqs[i])
    assert select_tip(other, self_id) == select_tip(t, self_id)


@given(random_trees(), st.integers(0, 3), st.randoms())
def test_select_tip_relabel_invariant(tree, self_id, rnd):
    blocks, seqs, _ = tree
    # relabel ids while preserving their relative order
    ids = sorted(rnd.sample(range(10**6, 10**7), len(blocks)))
    remap = {b.block_id: ids[i] for i, b in enumerate(blocks)}
    remap[0] = 0
    a, b = BlockTree(self_id), BlockTree(self_id)
    for i, x in enumerate(blocks):
        a.insert(x, seqs[i])
        b.insert(Block(remap[x.block_id], remap[x.parent], x.miner, x.height, x.mined_step), seqs[i])
    assert remap[select_tip(a, self_id)] == select_tip(b, self_id)


def test_tree_dump(tmp_path):
    t = BlockTree()
    chain_of(t, [5, 6])
    p = tmp_path / "chain.txt"
    t.dump(p)
    assert p.read_text().splitlines() == ["0 -1 -1 0 -1", "5 0 1 1 0", "6 5 1 2 0"]
