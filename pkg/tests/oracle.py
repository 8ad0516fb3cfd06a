"""Independent reference implementations used as test oracles.

``reference_propagate`` runs one mining step of dissemination with plain
Python objects (one GossipState per node, the scalar ``decide_forwards``) and
is compared against the array kernels. ``reachable_honest`` is a brute-force
BFS for coverage on tiny graphs.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from ledgersim.engine import partition_agents
from ledgersim.gossip import (
    Acceptance,
    GossipState,
    Message,
    MessageKind,
    accept,
    decide_forwards,
    failsafe_tick,
    note_fluff,
    relays_in_stem,
    stem_watch,
)
from ledgersim.kernels import ST_DROP, ST_DUP, ST_FRESH, Deliveries, GossipArrays, merge_inboxes, run_substep
from ledgersim.rng import RandomStream

_STATUS = {ST_FRESH: "fresh", ST_DUP: "dup", ST_DROP: "drop"}


def reference_propagate(overlay, params, seed, step, injections, sybils=(), victim=-1, substeps=32):
    """Per sub-step records of ``sends`` and receipt ``status`` lists.

    ``injections`` is a list of ``(uid, origin)``; sends are
    ``(src, dst, uid, ttl, hops, phase)`` in canonical inbox order.
    """
    n = overlay.node_count
    adj = overlay.adjacency()
    sybils = set(int(s) for s in sybils)
    states = [GossipState() for _ in range(n)]
    index = {uid: j for j, (uid, _) in enumerate(injections)}
    counts: dict[int, int] = {}
    inbox = []
    for uid, origin in injections:
        seq = counts.get(origin, 0)
        counts[origin] = seq + 1
        m = Message(uid, MessageKind.BLOCK, origin, params.ttl_init, 0, params.initial_phase())
        inbox.append((origin, -1, (seq,), m))
    inbox.sort(key=lambda e: e[:3])
    records = []
    now = 0
    while now < substeps and (inbox or any(set(gs.stem_pending) - gs.fluff_seen for gs in states)):
        sends = []
        status = []
        local: dict[int, int] = {}
        for v, frm, _seq, m in inbox:
            i = local.get(v, 0)
            local[v] = i + 1
            gs = states[v]
            note_fluff(gs, m)
            if accept(gs, m) is Acceptance.DUPLICATE:
                status.append((v, m.msg_id, "dup"))
                continue
            if v in sybils and m.origin == victim:
                status.append((v, m.msg_id, "drop"))
                continue
            status.append((v, m.msg_id, "fresh"))
            rng = RandomStream(seed, v, step, now)
            fw = decide_forwards(params, v, m, None if frm < 0 else frm, adj[v], rng)
            if fw and relays_in_stem(params, m):
                stem_watch(gs, m, now, params)
            for w, out in fw:
                sends.append((w, v, (0, i, adj[v].index(w)), out))
        fires = []
        for v in range(n):
            for m in failsafe_tick(states[v], now):
                j = index[m.msg_id]
                fires.append((v, m.msg_id))
                for w, out in decide_forwards(params, v, m, None, adj[v], RandomStream(seed, v, step, now)):
                    sends.append((w, v, (1, j, adj[v].index(w)), out))
        sends.sort(key=lambda e: e[:3])
        records.append(
            {
                "status": status,
                "sends": [(v, w, m.msg_id, m.ttl, m.hops, int(m.phase)) for w, v, _, m in sends],
                "fires": sorted(fires),
            }
        )
        inbox = sends
        now += 1
    return records


def kernel_propagate(overlay, params, seed, step, injections, sybils=(), victim=-1, substeps=32, backend=None, workers=1):
    """Same contract as :func:`reference_propagate`, driven through the array kernels."""
    n = overlay.node_count
    mask = np.zeros(n, dtype=bool)
    mask[list(sybils)] = True
    g = GossipArrays(
        n, overlay.indptr, overlay.indices, overlay.degrees, overlay.edge_keys, mask, victim,
        params.protocol.code, params.p, params.stem_hops, params.failsafe_timeout, seed,
    )  # fmt: skip
    uids = np.array([u for u, _ in injections], dtype=np.uint64)
    origins = np.array([o for _, o in injections], dtype=np.int64)
    g.reset_messages(uids, origins)
    counts: dict[int, int] = {}
    seqs = []
    for o in origins.tolist():
        seqs.append(counts.get(o, 0))
        counts[o] = seqs[-1] + 1
    m = len(injections)
    inbox = merge_inboxes(
        [
            Deliveries(
                origins, np.full(m, -1), np.array(seqs, dtype=np.int64), np.arange(m),
                np.full(m, params.ttl_init), np.zeros(m, dtype=np.int64), np.full(m, int(params.initial_phase())),
            )
        ]
    )  # fmt: skip
    parts = [(r.start, r.stop) for r in partition_agents(n, workers)]
    records = []
    now = 0
    uid_list = uids.astype(np.int64).tolist()
    while now < substeps and (len(inbox) or g.pending_watches()):
        res = run_substep(g, inbox, now, step, parts, backend)
        status = [
            (int(v), uid_list[j], _STATUS[int(s)]) for v, j, s in zip(inbox.dst.tolist(), inbox.msg.tolist(), res.status)
        ]
        o = res.out
        sends = [
            (s, d, uid_list[j], t, h, p)
            for s, d, j, t, h, p in zip(
                o.src.tolist(), o.dst.tolist(), o.msg.tolist(), o.ttl.tolist(), o.hops.tolist(), o.phase.tolist()
            )
        ]
        fires = sorted((int(v), uid_list[j]) for v, j in zip(res.fire_node.tolist(), res.fire_msg.tolist()))
        records.append({"status": status, "sends": sends, "fires": fires})
        inbox = res.out
        now += 1
    return records


def reachable_honest(adj, origin, sybils) -> set[int]:
    """Nodes reached by flooding from ``origin`` when sybils receive but never relay."""
    sybils = set(sybils)
    seen = {origin}
    q = deque([origin])
    while q:
        v = q.popleft()
        if v in sybils:
            continue
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                q.append(w)
    return seen - sybils - {origin}
