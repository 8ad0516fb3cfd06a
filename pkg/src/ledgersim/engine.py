"""Multi-level time-stepped scheduler.

Each mining step has a mining phase (every miner draws once at sub-step 0)
followed by a propagation phase of up to ``substeps_per_step`` sub-steps.
A message sent at sub-step ``t`` is in the destination inbox at ``t + 1``.
The propagation phase ends when all inboxes are empty and no fail-safe timer
is pending; anything still in flight after the last sub-step is dropped and
logged as ``TRUNCATED``.

Parallel execution splits the node ids into contiguous ranges. Within a
sub-step every worker reads the same frozen inbox snapshot and writes only its
own nodes' rows plus a private output buffer; buffers are merged in canonical
order before the next sub-step. With counter-based random draws this makes the
output identical for every worker count.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._accel import resolve_backend
from .agents import (
    Attack,
    NodeState,
    Role,
    RoleKind,
    assign_hashrates,
    honest_step,
    sample_sybils,
    selfish_step,
)
from .chain import Block, mine_ticks, mining_probability
from .config import SimConfig, TopologyConfig
from .gossip import MessageKind
from .kernels import MAX_DEGREE, SLOT, ST_DROP, ST_DUP, ST_FRESH, Deliveries, GossipArrays, merge_inboxes, run_substep
from .metrics import EventKind, MetricsRecord, attack51_metrics, coverage_metric
from .overlay import Overlay, generate_random_graph, generate_small_world
from .rng import derive_seed

PROBE_UID = 1 << 62
_MINING_KEY = -(1 << 40)
_GRAPH_TAG = 0x6A
_VICTIM_TAG = 0x71C


@dataclass
class Clock:
    substeps_per_step: int
    mining_step: int = 0
    sub_step: int = 0

    def advance_substep(self) -> None:
        self.sub_step += 1
        if self.sub_step >= self.substeps_per_step:
            raise RuntimeError("propagation phase exceeded substeps_per_step")

    def next_step(self) -> None:
        self.mining_step += 1
        self.sub_step = 0


def arrival_key(step: int, sub: int, pos) -> int:
    """Totally ordered receipt sequence number."""
    return (step << 42) | (sub << 32) | pos


_PAYLOAD = {
    EventKind.MINED: ("block", "parent"),
    EventKind.PUBLISH: ("block", "arrival"),
    EventKind.RELEASE: ("tip", "blocks"),
    EventKind.ABANDON: ("tip", "blocks"),
    EventKind.RECV: ("msg", "from"),
    EventKind.DUP: ("msg", "from"),
    EventKind.DROP: ("msg", "from"),
    EventKind.SEND: ("msg", "to"),
    EventKind.FAILSAFE: ("msg", None),
    EventKind.TRUNCATED: ("pending", "watches"),
}


class EventTrace:
    """Ordered event log; rows are ``(step, sub_step, kind, node, key, a, b)``.

    Rows are sorted by ``(step, sub_step, node, key)``; ``key`` is the
    per-node sequence within a sub-step.

    ``level="chain"`` keeps block, selfish, Sybil and fail-safe events plus
    probe receipts. ``level="full"`` additionally logs every send, receipt and
    duplicate.
    """

    COLUMNS = ("step", "sub_step", "kind", "node", "key", "a", "b")
    probe_uid = PROBE_UID

    def __init__(self, level: str = "chain"):
        if level not in ("chain", "full"):
            raise ValueError("trace level must be 'chain' or 'full'")
        self.level = level
        self._chunks: list[np.ndarray] = []
        self._rows: np.ndarray | None = None

    def append_batch(self, step: int, sub: int, kind, node, key, a, b) -> None:
        kind = np.asarray(kind, dtype=np.int64)
        if kind.size == 0:
            return
        node, key, a, b = (np.asarray(x, dtype=np.int64) for x in (node, key, a, b))
        order = np.lexsort((key, node))
        chunk = np.empty((kind.size, 7), dtype=np.int64)
        chunk[:, 0] = step
        chunk[:, 1] = sub
        chunk[:, 2] = kind[order]
        chunk[:, 3] = node[order]
        chunk[:, 4] = key[order]
        chunk[:, 5] = a[order]
        chunk[:, 6] = b[order]
        self._chunks.append(chunk)
        self._rows = None

    @property
    def rows(self) -> np.ndarray:
        if self._rows is None:
            self._rows = np.concatenate(self._chunks) if self._chunks else np.empty((0, 7), dtype=np.int64)
        return self._rows

    def __len__(self) -> int:
        return len(self.rows)

    def count(self, kind: EventKind) -> int:
        return int(np.count_nonzero(self.rows[:, 2] == kind))

    def lines(self):
        for step, sub, kind, node, _key, a, b in self.rows.tolist():
            ka, kb = _PAYLOAD[EventKind(kind)]
            payload = f"{ka}={a}" if kb is None else f"{ka}={a} {kb}={b}"
            yield f"{step}\t{sub}\t{EventKind(kind).name.lower()}\t{node}\t{payload}"

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.rows).tobytes()).hexdigest()


class _Batch:
    """Events of one (step, sub-step), flushed into the trace in canonical order."""

    def __init__(self):
        self.parts: list[tuple] = []

    def add(self, kind, node, key, a, b) -> None:
        node = np.atleast_1d(np.asarray(node, dtype=np.int64))
        if node.size:
            self.parts.append((np.broadcast_to(np.int64(kind), node.shape), node, key, a, b))

    def flush(self, trace: EventTrace, step: int, sub: int) -> None:
        if not self.parts:
            return
        cols = [np.concatenate([np.broadcast_to(np.asarray(p[i], dtype=np.int64), p[1].shape) for p in self.parts]) for i in range(5)]
        trace.append_batch(step, sub, *cols)
        self.parts = []


def partition_agents(n: int, workers: int) -> list[range]:
    """Contiguous id ranges covering ``0..n-1``; sizes differ by at most one."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    workers = min(workers, n)
    size, extra = divmod(n, workers)
    out = []
    start = 0
    for w in range(workers):
        stop = start + size + (1 if w < extra else 0)
        out.append(range(start, stop))
        start = stop
    return out


def build_overlay(topo: TopologyConfig, seed: int) -> Overlay:
    if topo.kind == "random":
        return generate_random_graph(topo.nodes, topo.edges, seed)
    return generate_small_world(topo.nodes, topo.k, topo.beta, seed)


@dataclass
class SimResult:
    trace: EventTrace
    metrics: MetricsRecord
    overlay: Overlay
    roles: list[Role]
    attacker: int = -1
    victim: int = -1
    sybils: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    final_views: dict[int, NodeState] = field(default_factory=dict)


def validate_config(cfg: SimConfig) -> None:
    """Raise ``ValueError`` for inconsistencies that would only surface mid-run."""
    n = cfg.topology.nodes
    attack = cfg.attack
    if attack.attack is Attack.SYBIL:
        if attack.victim >= n:
            raise ValueError(f"victim {attack.victim} out of range for {n} nodes")
        if int(round(attack.sybil_fraction * n)) > n - 2:
            raise ValueError("sybil_fraction leaves no honest receiver besides the victim")
        return
    roles = assign_hashrates(n, cfg.mining.miner_fraction, attack, cfg.run.seed)
    mining_probability([r.hashrate for r in roles], cfg.mining)
    if cfg.protocol.ttl_init >= SLOT:
        raise ValueError("ttl_init too large")


def run_simulation(
    cfg: SimConfig,
    *,
    overlay: Overlay | None = None,
    victim: int | None = None,
    sybils=None,
    workers: int | None = None,
    backend: str | None = None,
    trace_level: str | None = None,
) -> SimResult:
    """Run one seeded simulation and return its trace and metrics.

    ``overlay``, ``victim`` and ``sybils`` override the values derived from the
    configuration and seed.
    """
    seed = cfg.run.seed
    backend = resolve_backend(backend)
    workers = cfg.run.workers if workers is None else workers
    trace = EventTrace(trace_level or cfg.run.trace)
    if overlay is None:
        overlay = build_overlay(cfg.topology, derive_seed(seed, _GRAPH_TAG))
    n = overlay.node_count
    if n and overlay.degrees.max() > MAX_DEGREE:
        raise ValueError("node degree exceeds the kernel limit")
    attack = cfg.attack
    sybil_mode = attack.attack is Attack.SYBIL
    roles = assign_hashrates(n, cfg.mining.miner_fraction, attack, seed)

    sybil_mask = np.zeros(n, dtype=bool)
    if sybil_mode:
        if victim is None:
            victim = attack.victim if attack.victim >= 0 else int(derive_seed(seed, _VICTIM_TAG) % n)
        if not 0 <= victim < n:
            raise ValueError(f"victim {victim} out of range")
        if sybils is None:
            sybils = sample_sybils(n, attack.sybil_fraction, victim, seed)
        sybils = np.unique(np.asarray(sybils, dtype=np.int64))
        if victim in set(sybils.tolist()):
            raise ValueError("the victim cannot be a sybil")
        sybil_mask[sybils] = True
        for s in sybils.tolist():
            roles[s] = Role(RoleKind.SYBIL)
    else:
        victim = -1
        sybils = np.empty(0, dtype=np.int64)

    hashrates = np.array([r.hashrate for r in roles], dtype=np.float64)
    miners = np.nonzero(hashrates > 0)[0].astype(np.int64)
    mining_probability(hashrates, cfg.mining)
    nodes = {int(v): NodeState.create(int(v), roles[v]) for v in miners}
    is_miner = hashrates > 0
    honest = np.array([r.kind.is_honest for r in roles], dtype=bool)
    attacker = next((i for i, r in enumerate(roles) if r.kind in (RoleKind.ATTACKER51, RoleKind.SELFISH)), -1)

    proto = cfg.protocol
    g = GossipArrays(
        n=n,
        indptr=overlay.indptr,
        indices=overlay.indices,
        deg=overlay.degrees,
        edge_keys=overlay.edge_keys,
        sybil=sybil_mask,
        victim=victim,
        protocol=proto.protocol.code,
        p=proto.p,
        stem_hops=proto.stem_hops,
        timeout=proto.failsafe_timeout,
        seed=seed,
    )
    partitions = [(r.start, r.stop) for r in partition_agents(n, workers)]
    executor = ThreadPoolExecutor(len(partitions)) if len(partitions) > 1 else None
    blocks: dict[int, Block] = {}
    full = trace.level == "full"
    S = cfg.run.substeps_per_step
    steps = (1 if cfg.mining.total_steps > 0 else 0) if sybil_mode else cfg.mining.total_steps
    phase0 = int(proto.initial_phase())

    try:
        for step in range(steps):
            batch = _Batch()
            uids: list[int] = []
            origins: list[int] = []
            kinds: list[int] = []
            ekey = _MINING_KEY

            if sybil_mode:
                uids.append(PROBE_UID)
                origins.append(victim)
                kinds.append(MessageKind.PROBE)
            else:
                mined = mine_ticks(seed, miners, hashrates[miners], cfg.mining, step)
                for idx, v in enumerate(miners.tolist()):
                    node = nodes[v]
                    if node.role.kind is RoleKind.SELFISH:
                        act = selfish_step(node, step, bool(mined[idx]), attack.selfish_lead)
                        if act.abandoned:
                            batch.add(EventKind.ABANDON, v, ekey, act.abandoned[-1].block_id, len(act.abandoned))
                            ekey += 1
                        if act.mined is not None:
                            blocks[act.mined.block_id] = act.mined
                            batch.add(EventKind.MINED, v, ekey, act.mined.block_id, act.mined.parent)
                            ekey += 1
                        if act.released:
                            batch.add(EventKind.RELEASE, v, ekey, act.released[-1].block_id, len(act.released))
                            ekey += 1
                            for b in act.released:
                                uids.append(b.block_id)
                                origins.append(v)
                                kinds.append(MessageKind.BLOCK)
                    elif mined[idx]:
                        b = honest_step(node, step, True)
                        blocks[b.block_id] = b
                        batch.add(EventKind.MINED, v, ekey, b.block_id, b.parent)
                        ekey += 1
                        uids.append(b.block_id)
                        origins.append(v)
                        kinds.append(MessageKind.BLOCK)

            if not uids:
                batch.flush(trace, step, 0)
                continue

            m = len(uids)
            g.reset_messages(np.array(uids, dtype=np.uint64), np.array(origins, dtype=np.int64))
            uid_i64 = np.array(uids, dtype=np.int64)
            is_block = np.array(kinds) == MessageKind.BLOCK
            origin_arr = np.array(origins, dtype=np.int64)
            _, first = np.unique(origin_arr, return_index=True)
            per_origin = np.arange(m) - np.repeat(first, np.bincount(origin_arr)[origin_arr[first]]) if m else np.empty(0)
            inbox = merge_inboxes(
                [
                    Deliveries(
                        origin_arr,
                        np.full(m, -1, dtype=np.int64),
                        np.asarray(per_origin, dtype=np.int64),
                        np.arange(m, dtype=np.int64),
                        np.full(m, proto.ttl_init, dtype=np.int64),
                        np.zeros(m, dtype=np.int64),
                        np.full(m, phase0, dtype=np.int64),
                    )
                ]
            )
            published = np.zeros(m, dtype=bool)
            receipts: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
            sub = 0
            while sub < S and (len(inbox) or g.pending_watches()):
                res = run_substep(g, inbox, sub, step, partitions, backend, executor)
                pos = np.arange(len(inbox), dtype=np.int64)
                fresh = res.status == ST_FRESH
                if full:
                    for code, kind in ((ST_FRESH, EventKind.RECV), (ST_DUP, EventKind.DUP), (ST_DROP, EventKind.DROP)):
                        sel = res.status == code
                        batch.add(kind, inbox.dst[sel], pos[sel] * SLOT, uid_i64[inbox.msg[sel]], inbox.src[sel])
                    o = res.out
                    batch.add(EventKind.SEND, o.src, o.seq, uid_i64[o.msg], o.dst)
                else:
                    sel = fresh & ~is_block[inbox.msg]
                    batch.add(EventKind.RECV, inbox.dst[sel], pos[sel] * SLOT, uid_i64[inbox.msg[sel]], inbox.src[sel])
                    sel = res.status == ST_DROP
                    batch.add(EventKind.DROP, inbox.dst[sel], pos[sel] * SLOT, uid_i64[inbox.msg[sel]], inbox.src[sel])

                bsel = np.nonzero(fresh & is_block[inbox.msg])[0]
                if len(bsel):
                    hs = bsel[honest[inbox.dst[bsel]] & ~published[inbox.msg[bsel]]]
                    if len(hs):
                        _, firsts = np.unique(inbox.msg[hs], return_index=True)
                        hs = np.sort(hs[firsts])
                        published[inbox.msg[hs]] = True
                        batch.add(
                            EventKind.PUBLISH, inbox.dst[hs], hs * SLOT + 1, uid_i64[inbox.msg[hs]],
                            arrival_key(step, sub, hs),
                        )  # fmt: skip
                    vs = bsel[is_miner[inbox.dst[bsel]] & (inbox.dst[bsel] != origin_arr[inbox.msg[bsel]])]
                    if len(vs):
                        receipts.append((inbox.dst[vs], inbox.msg[vs], arrival_key(step, sub, vs)))
                if len(res.fire_node):
                    batch.add(
                        EventKind.FAILSAFE, res.fire_node, (len(inbox) + res.fire_msg) * SLOT,
                        uid_i64[res.fire_msg], -1,
                    )  # fmt: skip
                batch.flush(trace, step, sub)
                inbox = res.out
                sub += 1
            batch.flush(trace, step, sub)
            if len(inbox) or g.pending_watches():
                batch.add(EventKind.TRUNCATED, -1, 0, len(inbox), g.pending_watches())
                batch.flush(trace, step, sub)

            for dst, msg, keys in receipts:
                for v, j, k in zip(dst.tolist(), msg.tolist(), keys.tolist()):
                    nodes[v].view.insert(blocks[uids[j]], k)
    finally:
        if executor is not None:
            executor.shutdown()

    if sybil_mode:
        cov = coverage_metric(trace, victim, sybils, n) if steps else 0.0
        metrics = MetricsRecord(coverage=cov)
    else:
        metrics = attack51_metrics(trace, attacker)
    return SimResult(trace, metrics, overlay, roles, attacker, victim, sybils, nodes)
