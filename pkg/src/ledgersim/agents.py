"""Node behaviours built from the gossip and chain primitives."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .chain import Block, BlockTree, make_block_id
from .gossip import Message
from .rng import derive_seed


class RoleKind(str, Enum):
    HONEST = "honest"
    POOL = "pool"
    ATTACKER51 = "attacker51"
    SELFISH = "selfish"
    SYBIL = "sybil"
    PASSIVE = "passive"

    @property
    def is_honest(self) -> bool:
        return self not in (RoleKind.ATTACKER51, RoleKind.SELFISH, RoleKind.SYBIL)


class Attack(str, Enum):
    NONE = "none"
    FIFTY_ONE = "fifty_one"
    SELFISH_MINING = "selfish_mining"
    SYBIL = "sybil"


@dataclass(frozen=True)
class Role:
    kind: RoleKind
    hashrate: float = 0.0


@dataclass(frozen=True)
class AttackConfig:
    attack: Attack = Attack.NONE
    attacker_hashrate: float = 0.0
    pools_enabled: bool = False
    pool_count: int = 9
    pool_aggregate_share: float = 0.804
    pool_shares: tuple[float, ...] | None = None
    selfish_lead: int = 2
    sybil_fraction: float = 0.0
    victim: int = -1

    def __post_init__(self):
        object.__setattr__(self, "attack", Attack(self.attack))
        if not 0.0 <= self.attacker_hashrate < 1.0:
            raise ValueError("attacker_hashrate must lie in [0,1)")
        if self.pool_count < 0:
            raise ValueError("pool_count must be >= 0")
        if not 0.0 <= self.pool_aggregate_share <= 1.0:
            raise ValueError("pool_aggregate_share must lie in [0,1]")
        if self.pool_shares is not None:
            if len(self.pool_shares) != self.pool_count:
                raise ValueError("pool_shares must list exactly pool_count values")
            if abs(sum(self.pool_shares) - self.pool_aggregate_share) > 1e-9:
                raise ValueError("pool_shares must sum to pool_aggregate_share")
        if self.selfish_lead < 2:
            raise ValueError("selfish_lead must be >= 2")
        if not 0.0 <= self.sybil_fraction < 1.0:
            raise ValueError("sybil_fraction must lie in [0,1)")

    @property
    def has_miner_attacker(self) -> bool:
        return self.attack in (Attack.FIFTY_ONE, Attack.SELFISH_MINING)


def assign_hashrates(n: int, miner_fraction: float, cfg: AttackConfig, seed: int) -> list[Role]:
    """Pick miners, pools and the attacker uniformly by seed and split the hash-rate.

    The attacker gets exactly ``h``. With pools enabled the pool nodes share
    ``pool_aggregate_share * (1 - h)`` and the remaining honest miners share the
    rest; otherwise all honest miners share ``1 - h`` equally.
    """
    if not 0.0 < miner_fraction <= 1.0:
        raise ValueError("miner_fraction must lie in (0,1]")
    if cfg.attack is Attack.SYBIL:
        return [Role(RoleKind.PASSIVE) for _ in range(n)]
    n_miners = int(round(miner_fraction * n))
    if n_miners < 1:
        raise ValueError("configuration yields zero miners")
    h = cfg.attacker_hashrate if cfg.has_miner_attacker else 0.0
    if h >= 1.0:
        raise ValueError("attacker hashrate must be < 1")
    order = np.random.default_rng(derive_seed(seed, 0xA551)).permutation(n)
    roles = [Role(RoleKind.PASSIVE) for _ in range(n)]
    rest = list(order[:n_miners])

    if cfg.has_miner_attacker:
        kind = RoleKind.ATTACKER51 if cfg.attack is Attack.FIFTY_ONE else RoleKind.SELFISH
        roles[rest.pop(0)] = Role(kind, h)
        if not rest and h < 1.0:
            raise ValueError("no honest miner left to hold the remaining hash-rate")
    honest_total = 1.0 - h
    pools: list[int] = []
    if cfg.pools_enabled and cfg.pool_count:
        if len(rest) < cfg.pool_count:
            raise ValueError("not enough miners for the configured pool_count")
        pools, rest = rest[: cfg.pool_count], rest[cfg.pool_count :]
    if pools:
        pool_total = cfg.pool_aggregate_share * honest_total if rest else honest_total
        shares = cfg.pool_shares or (cfg.pool_aggregate_share / cfg.pool_count,) * cfg.pool_count
        scale = pool_total / sum(shares)
        for v, s in zip(pools, shares):
            roles[v] = Role(RoleKind.POOL, s * scale)
        honest_total -= pool_total
    for v in rest:
        roles[v] = Role(RoleKind.HONEST, honest_total / len(rest))
    return roles


def sample_sybils(n: int, fraction: float, victim: int, seed: int) -> np.ndarray:
    """Sorted Sybil ids; never contains ``victim``.

    Uses a fixed permutation of the non-victim nodes, so for a given seed the
    sets are nested as ``fraction`` grows.
    """
    count = int(round(fraction * n))
    if count > n - 1:
        raise ValueError("sybil fraction leaves no honest node besides the victim")
    others = np.array([v for v in range(n) if v != victim], dtype=np.int64)
    perm = np.random.default_rng(derive_seed(seed, 0x5B1)).permutation(others)
    return np.sort(perm[:count])


@dataclass
class SelfishState:
    private_chain: list[Block] = field(default_factory=list)
    fork_base: int | None = None
    episodes_finalized: int = 0


@dataclass
class NodeState:
    """Chain-level state of one mining agent (gossip state lives in the kernel arrays)."""

    node_id: int
    role: Role
    view: BlockTree
    selfish: SelfishState | None = None

    @classmethod
    def create(cls, node_id: int, role: Role) -> NodeState:
        st = SelfishState() if role.kind is RoleKind.SELFISH else None
        return cls(node_id, role, BlockTree(owner=node_id), st)


def _mining_seq(step: int, idx: int = 0) -> int:
    return (step << 42) + idx


def honest_step(node: NodeState, step: int, mined: bool) -> Block | None:
    """Build a block on the node's preferred tip when its mining draw succeeded.

    Relaying of inbox messages is done by the propagation kernel.
    """
    if not mined:
        return None
    tip = node.view.blocks[node.view.select_tip(node.node_id)]
    b = Block(make_block_id(step, node.node_id), tip.block_id, node.node_id, tip.height + 1, step)
    node.view.insert(b, _mining_seq(step))
    return b


@dataclass
class SelfishActions:
    mined: Block | None = None
    released: list[Block] = field(default_factory=list)
    abandoned: list[Block] = field(default_factory=list)


def selfish_step(node: NodeState, step: int, mined: bool, lead_threshold: int) -> SelfishActions:
    """Withhold-until-lead-k strategy.

    The private chain is abandoned as soon as the public chain is at least as
    high; it is released in full once it leads the public chain by
    ``lead_threshold`` blocks.
    """
    st = node.selfish
    view = node.view
    actions = SelfishActions()
    pub_tip = view.blocks[view.select_tip(node.node_id)]
    if st.private_chain and pub_tip.height >= st.private_chain[-1].height:
        actions.abandoned = st.private_chain
        st.private_chain = []
        st.fork_base = None
    if mined:
        parent = st.private_chain[-1] if st.private_chain else pub_tip
        if not st.private_chain:
            st.fork_base = parent.block_id
        b = Block(make_block_id(step, node.node_id), parent.block_id, node.node_id, parent.height + 1, step)
        st.private_chain.append(b)
        actions.mined = b
    if st.private_chain and st.private_chain[-1].height - pub_tip.height >= lead_threshold:
        actions.released = st.private_chain
        for i, b in enumerate(actions.released):
            view.insert(b, _mining_seq(step, i))
        st.private_chain = []
        st.fork_base = view.select_tip(node.node_id)
        st.episodes_finalized += 1
    return actions


class Filter(str, Enum):
    DROP = "drop"
    PROCESS = "process_normally"


def sybil_relay_filter(role: Role, m: Message, cfg: AttackConfig) -> Filter:
    if role.kind is RoleKind.SYBIL and m.origin == cfg.victim:
        return Filter.DROP
    return Filter.PROCESS
