"""Propagation sub-step kernels.

One call processes the inbox snapshot of a contiguous range of nodes for one
propagation sub-step: duplicate suppression, the Sybil filter, forwarding
decisions, stem watches, and fail-safe firing. It writes only the rows of the
per-node state arrays that belong to its range, so disjoint ranges can run on
separate threads.

Two interchangeable backends exist: ``_substep_numba`` (compiled loop) and
``_substep_numpy`` (vectorized). Their outputs are identical element for
element; which one runs is decided by :mod:`ledgersim._accel`.

Emission sequence numbers encode ``trigger * SLOT + 2 + neighbor_slot`` where
``trigger`` is the global inbox position of the message that caused the
emission, or ``total + msg`` for a fail-safe firing. Sorting deliveries by
``(dst, src, seq)`` therefore gives a canonical inbox order that does not
depend on how nodes were split across workers.
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._accel import njit, resolve_backend
from .gossip import Phase, Protocol
from .rng import Purpose, uniform_array, uniform_nb

SLOT = 1 << 22
MAX_DEGREE = SLOT - 3

ST_FRESH = 0
ST_DUP = 1
ST_DROP = 2

_PH_NONE = int(Phase.NONE)
_PH_STEM = int(Phase.STEM)
_PH_FLUFF = int(Phase.FLUFF)
_P_FP = Protocol.FIXED_PROBABILITY.code
_P_PB = Protocol.PROBABILISTIC_BROADCAST.code
_P_DAN = Protocol.DANDELION.code
_P_DPM = Protocol.DANDELION_PM.code
_R_EACH = int(Purpose.FORWARD_EACH)
_R_ALL = int(Purpose.FORWARD_ALL)
_R_STEM = int(Purpose.STEM)


class Deliveries(NamedTuple):
    dst: np.ndarray
    src: np.ndarray
    seq: np.ndarray
    msg: np.ndarray
    ttl: np.ndarray
    hops: np.ndarray
    phase: np.ndarray

    @classmethod
    def empty(cls) -> Deliveries:
        return cls(*(np.empty(0, dtype=np.int64) for _ in range(7)))

    @classmethod
    def concat(cls, parts) -> Deliveries:
        parts = [p for p in parts if len(p.dst)]
        if not parts:
            return cls.empty()
        if len(parts) == 1:
            return parts[0]
        return cls(*(np.concatenate(cols) for cols in zip(*parts)))

    def take(self, idx) -> Deliveries:
        return Deliveries(*(col[idx] for col in self))

    def __len__(self) -> int:  # type: ignore[override]
        return len(self.dst)


def merge_inboxes(batches) -> Deliveries:
    """Concatenate worker outputs and sort canonically by (dst, src, seq)."""
    d = Deliveries.concat(list(batches))
    if len(d) <= 1:
        return d
    order = np.lexsort((d.seq, d.src, d.dst))
    return d.take(order)


@dataclass
class GossipArrays:
    """Static graph/protocol data plus the per-step, per-node gossip state."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    deg: np.ndarray
    edge_keys: np.ndarray
    sybil: np.ndarray  # bool per node
    victim: int  # -1 disables the Sybil filter
    protocol: int
    p: float
    stem_hops: int
    timeout: int
    seed: int
    # per-step state, shape (n, M) for M messages created this step
    msg_uid: np.ndarray | None = None
    msg_origin: np.ndarray | None = None
    seen: np.ndarray | None = None
    deadline: np.ndarray | None = None
    fs_ttl: np.ndarray | None = None
    fs_hops: np.ndarray | None = None

    def reset_messages(self, uids: np.ndarray, origins: np.ndarray) -> None:
        m = len(uids)
        self.msg_uid = np.asarray(uids, dtype=np.uint64)
        self.msg_origin = np.asarray(origins, dtype=np.int64)
        self.seen = np.zeros((self.n, m), dtype=np.bool_)
        self.deadline = np.full((self.n, m), -1, dtype=np.int64)
        self.fs_ttl = np.zeros((self.n, m), dtype=np.int64)
        self.fs_hops = np.zeros((self.n, m), dtype=np.int64)

    def pending_watches(self) -> int:
        if self.protocol != _P_DPM or self.deadline is None:
            return 0
        return int(np.count_nonzero(self.deadline >= 0))


class SubstepOutput(NamedTuple):
    status: np.ndarray  # aligned with the input slice
    out: Deliveries
    fire_node: np.ndarray
    fire_msg: np.ndarray


# numba backend -------------------------------------------------------------


@njit(nogil=True, cache=True)
def _find_slot(indices, a, b, w):
    lo = a
    hi = b
    while lo < hi:
        mid = (lo + hi) // 2
        if indices[mid] < w:
            lo = mid + 1
        else:
            hi = mid
    if lo < b and indices[lo] == w:
        return lo - a
    return -1


@njit(nogil=True, cache=True)
def _substep_kernel(
    lo, hi, offset, total, now, step, seed, proto, p, stem_hops, timeout, victim,
    indptr, indices, sybil, msg_uid, msg_origin, seen, deadline, fs_ttl, fs_hops,
    dst, src, msg, ttl, hops, phase,
    status, o_dst, o_src, o_seq, o_msg, o_ttl, o_hops, o_phase, f_node, f_msg,
):  # fmt: skip
    k = 0
    nf = 0
    dandelion = proto == _P_DAN or proto == _P_DPM
    for i in range(dst.shape[0]):
        v = dst[i]
        j = msg[i]
        ph = phase[i]
        if ph == _PH_FLUFF:
            deadline[v, j] = -1
        if seen[v, j]:
            status[i] = ST_DUP
            continue
        seen[v, j] = True
        if victim >= 0 and sybil[v] and msg_origin[j] == victim:
            status[i] = ST_DROP
            continue
        status[i] = ST_FRESH
        t = ttl[i]
        a = indptr[v]
        b = indptr[v + 1]
        d = b - a
        if t <= 0 or d == 0:
            continue
        frm = src[i]
        h = hops[i]
        uid = msg_uid[j]
        base = (offset + i) * SLOT + 2
        if dandelion and ph == _PH_STEM and h < stem_hops:
            pos = -1
            if frm >= 0:
                pos = _find_slot(indices, a, b, frm)
            cnt = d - 1 if pos >= 0 else d
            if cnt == 0:
                slot = 0
            else:
                u = uniform_nb(seed, _R_STEM, v, step, now, uid, 0)
                slot = int(u * cnt)
                if slot > cnt - 1:
                    slot = cnt - 1
                if pos >= 0 and slot >= pos:
                    slot += 1
            o_dst[k] = indices[a + slot]
            o_src[k] = v
            o_seq[k] = base + slot
            o_msg[k] = j
            o_ttl[k] = t - 1
            o_hops[k] = h + 1
            o_phase[k] = _PH_STEM
            k += 1
            if proto == _P_DPM:
                deadline[v, j] = now + timeout
                fs_ttl[v, j] = t
                fs_hops[v, j] = h
            continue
        out_phase = _PH_FLUFF if dandelion else _PH_NONE
        if proto == _P_PB:
            if uniform_nb(seed, _R_ALL, v, step, now, uid, 0) >= p:
                continue
        for s in range(d):
            w = indices[a + s]
            if w == frm:
                continue
            if proto == _P_FP:
                if uniform_nb(seed, _R_EACH, v, step, now, uid, s) >= p:
                    continue
            o_dst[k] = w
            o_src[k] = v
            o_seq[k] = base + s
            o_msg[k] = j
            o_ttl[k] = t - 1
            o_hops[k] = h + 1
            o_phase[k] = out_phase
            k += 1
    m = seen.shape[1]
    for v in range(lo, hi):
        for j in range(m):
            dl = deadline[v, j]
            if dl >= 0 and dl <= now:
                deadline[v, j] = -1
                f_node[nf] = v
                f_msg[nf] = j
                nf += 1
                t = fs_ttl[v, j]
                if t <= 0:
                    continue
                a = indptr[v]
                base = (total + j) * SLOT + 2
                for s in range(indptr[v + 1] - a):
                    o_dst[k] = indices[a + s]
                    o_src[k] = v
                    o_seq[k] = base + s
                    o_msg[k] = j
                    o_ttl[k] = t - 1
                    o_hops[k] = fs_hops[v, j] + 1
                    o_phase[k] = _PH_FLUFF
                    k += 1
    return k, nf


def _due(g: GossipArrays, lo: int, hi: int, now: int) -> np.ndarray:
    sub = g.deadline[lo:hi]
    return (sub >= 0) & (sub <= now)


def _substep_numba(g: GossipArrays, d: Deliveries, lo, hi, offset, total, now, step) -> SubstepOutput:
    bound = int(g.deg[d.dst].sum())
    nf_max = 0
    if g.protocol == _P_DPM:
        fv = np.nonzero(_due(g, lo, hi, now))[0]
        nf_max = len(fv)
        bound += int(g.deg[fv + lo].sum())
    status = np.empty(len(d), dtype=np.int8)
    outs = [np.empty(bound, dtype=np.int64) for _ in range(7)]
    f_node = np.empty(nf_max, dtype=np.int64)
    f_msg = np.empty(nf_max, dtype=np.int64)
    k, nf = _substep_kernel(
        lo, hi, offset, total, now, step, np.uint64(g.seed), g.protocol, g.p, g.stem_hops,
        g.timeout, g.victim, g.indptr, g.indices, g.sybil, g.msg_uid, g.msg_origin,
        g.seen, g.deadline, g.fs_ttl, g.fs_hops,
        d.dst, d.src, d.msg, d.ttl, d.hops, d.phase,
        status, *outs, f_node, f_msg,
    )  # fmt: skip
    out = Deliveries(*(col[:k] for col in outs))
    return SubstepOutput(status, out, f_node[:nf], f_msg[:nf])


# numpy backend -------------------------------------------------------------


def _expand(g: GossipArrays, v: np.ndarray):
    """Row index and neighbor slot for every adjacency entry of each ``v``."""
    counts = g.deg[v]
    rep = np.repeat(np.arange(len(v)), counts)
    starts = np.cumsum(counts) - counts
    slot = np.arange(int(counts.sum()), dtype=np.int64) - np.repeat(starts, counts)
    w = g.indices[g.indptr[v][rep] + slot]
    return rep, slot, w


def _substep_numpy(g: GossipArrays, d: Deliveries, lo, hi, offset, total, now, step) -> SubstepOutput:
    m = len(d)
    parts: list[Deliveries] = []
    status = np.empty(m, dtype=np.int8)
    dandelion = g.protocol in (_P_DAN, _P_DPM)
    if m:
        nmsg = g.seen.shape[1]
        _, first_idx = np.unique(d.dst * nmsg + d.msg, return_index=True)
        first = np.zeros(m, dtype=bool)
        first[first_idx] = True
        fresh = first & ~g.seen[d.dst, d.msg]
        g.seen[d.dst[fresh], d.msg[fresh]] = True
        if g.victim >= 0:
            drop = fresh & g.sybil[d.dst] & (g.msg_origin[d.msg] == g.victim)
        else:
            drop = np.zeros(m, dtype=bool)
        status[:] = ST_DUP
        status[fresh] = ST_FRESH
        status[drop] = ST_DROP

        rows = np.nonzero(fresh & ~drop & (d.ttl > 0) & (g.deg[d.dst] > 0))[0]
        v, frm, j = d.dst[rows], d.src[rows], d.msg[rows]
        t, h, ph = d.ttl[rows], d.hops[rows], d.phase[rows]
        uid = g.msg_uid[j]
        base = (offset + rows) * SLOT + 2
        if dandelion:
            stem = (ph == _PH_STEM) & (h < g.stem_hops)
        else:
            stem = np.zeros(len(rows), dtype=bool)

        if stem.any():
            sv, sf, sj, st, sh = v[stem], frm[stem], j[stem], t[stem], h[stem]
            key = sv * g.n + sf
            pos = np.searchsorted(g.edge_keys, key)
            hit = (sf >= 0) & (pos < len(g.edge_keys))
            hit[hit] = g.edge_keys[pos[hit]] == key[hit]
            local = pos - g.indptr[sv]
            cnt = g.deg[sv] - hit
            u = uniform_array(g.seed, _R_STEM, sv, step, now, uid[stem], 0)
            slot = np.minimum((u * cnt).astype(np.int64), cnt - 1)
            slot = np.where(hit & (slot >= local), slot + 1, slot)
            slot = np.where(cnt == 0, 0, slot)
            parts.append(
                Deliveries(
                    g.indices[g.indptr[sv] + slot], sv, base[stem] + slot, sj,
                    st - 1, sh + 1, np.full(len(sv), _PH_STEM, dtype=np.int64),
                )  # fmt: skip
            )
            if g.protocol == _P_DPM:
                g.deadline[sv, sj] = now + g.timeout
                g.fs_ttl[sv, sj] = st
                g.fs_hops[sv, sj] = sh

        b = ~stem
        if g.protocol == _P_PB and b.any():
            idx = np.nonzero(b)[0]
            coin = uniform_array(g.seed, _R_ALL, v[idx], step, now, uid[idx], 0) < g.p
            b[idx[~coin]] = False
        if b.any():
            bv, bf, bj, bt, bh, bbase, buid = v[b], frm[b], j[b], t[b], h[b], base[b], uid[b]
            rep, slot, w = _expand(g, bv)
            keep = w != bf[rep]
            if g.protocol == _P_FP:
                keep &= uniform_array(g.seed, _R_EACH, bv[rep], step, now, buid[rep], slot) < g.p
            rep, slot, w = rep[keep], slot[keep], w[keep]
            out_phase = _PH_FLUFF if dandelion else _PH_NONE
            parts.append(
                Deliveries(
                    w, bv[rep], bbase[rep] + slot, bj[rep], bt[rep] - 1, bh[rep] + 1,
                    np.full(len(w), out_phase, dtype=np.int64),
                )  # fmt: skip
            )
        fl = d.phase == _PH_FLUFF
        if g.protocol == _P_DPM and fl.any():
            g.deadline[d.dst[fl], d.msg[fl]] = -1

    f_node = f_msg = np.empty(0, dtype=np.int64)
    if g.protocol == _P_DPM:
        fv, fj = np.nonzero(_due(g, lo, hi, now))
        f_node, f_msg = fv.astype(np.int64) + lo, fj.astype(np.int64)
        g.deadline[f_node, f_msg] = -1
        if len(f_node):
            ft = g.fs_ttl[f_node, f_msg]
            live = ft > 0
            fv, fj, ft = f_node[live], f_msg[live], ft[live]
            fh = g.fs_hops[fv, fj]
            rep, slot, w = _expand(g, fv)
            parts.append(
                Deliveries(
                    w, fv[rep], (total + fj[rep]) * SLOT + 2 + slot, fj[rep], ft[rep] - 1,
                    fh[rep] + 1, np.full(len(w), _PH_FLUFF, dtype=np.int64),
                )  # fmt: skip
            )
    return SubstepOutput(status, Deliveries.concat(parts), f_node, f_msg)


_BACKENDS = {"numba": _substep_numba, "numpy": _substep_numpy}


def run_substep(
    g: GossipArrays,
    inbox: Deliveries,
    now: int,
    step: int,
    partitions: list[tuple[int, int]],
    backend: str | None = None,
    executor: Executor | None = None,
) -> SubstepOutput:
    """Process one sub-step for all partitions; ``inbox`` must be canonically sorted."""
    fn = _BACKENDS[resolve_backend(backend)]
    total = len(inbox)
    cuts = np.searchsorted(inbox.dst, [lo for lo, _ in partitions] + [partitions[-1][1]])
    jobs = [
        (lo, hi, int(cuts[w]), inbox.take(slice(cuts[w], cuts[w + 1])))
        for w, (lo, hi) in enumerate(partitions)
    ]
    if executor is None or len(jobs) == 1:
        results = [fn(g, d, lo, hi, off, total, now, step) for lo, hi, off, d in jobs]
    else:
        futures = [executor.submit(fn, g, d, lo, hi, off, total, now, step) for lo, hi, off, d in jobs]
        results = [f.result() for f in futures]
    status = np.concatenate([r.status for r in results]) if results else np.empty(0, np.int8)
    return SubstepOutput(
        status,
        merge_inboxes(r.out for r in results),
        np.concatenate([r.fire_node for r in results]),
        np.concatenate([r.fire_msg for r in results]),
    )
