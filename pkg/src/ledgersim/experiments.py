"""Repetition, aggregation and parameter sweeps.

Run ``r`` of every sweep row uses the same seed ``derive_seed(master, r)``, so
rows differ only in the swept parameter (common random numbers). Graphs,
miner placement and Sybil sets are therefore shared across rows of one
repetition, which sharpens row-to-row comparisons.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import Attack
from .config import SimConfig, protocol_from_spec
from .engine import _GRAPH_TAG, build_overlay, run_simulation
from .metrics import METRIC_FIELDS, MetricsRecord, attack51_metrics, coverage_metric
from .rng import derive_seed

__all__ = [
    "SweepRow",
    "SweepTable",
    "aggregate",
    "attack51_metrics",
    "coverage_metric",
    "run_seeds",
    "rotated_victims",
    "sweep_hashrate",
    "sweep_sybil",
]

_VICTIM_PERM_TAG = 0x0B7C

# Metrics written per command; all fields are still kept in memory.
CSV_METRICS = {
    "attack51": ("attacker_blocks_total", "pct_main_by_attacker", "pct_attacker_in_main"),
    "selfish": ("selfish_episodes", "attacker_blocks_main", "pct_main_by_attacker"),
    "sybil": ("coverage",),
    "baseline": METRIC_FIELDS[:-1],
}


def aggregate(records: list[MetricsRecord]) -> dict[str, tuple[float, float]]:
    """Mean and population standard deviation of every metric field."""
    if not records:
        raise ValueError("cannot aggregate an empty list of records")
    data = np.array([[getattr(r, f) for f in METRIC_FIELDS] for r in records], dtype=np.float64)
    # Sort each column so the float reduction is independent of input order.
    data = np.sort(data, axis=0)
    return {f: (float(data[:, i].mean()), float(data[:, i].std())) for i, f in enumerate(METRIC_FIELDS)}


@dataclass
class SweepRow:
    param: str
    records: list[MetricsRecord]

    @property
    def stats(self) -> dict[str, tuple[float, float]]:
        return aggregate(self.records)

    def mean(self, metric: str) -> float:
        return self.stats[metric][0]

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.records], dtype=np.float64)


@dataclass
class SweepTable:
    name: str
    repetitions: int
    seeds: list[int]
    rows: list[SweepRow] = field(default_factory=list)

    def row(self, param: str) -> SweepRow:
        for r in self.rows:
            if r.param == param:
                return r
        raise KeyError(param)

    def mean(self, param: str, metric: str) -> float:
        return self.row(param).mean(metric)

    def to_csv(self, path, metrics=None) -> Path:
        metrics = tuple(metrics or CSV_METRICS.get(self.name, METRIC_FIELDS))
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["param", "metric", "mean", "stddev", "runs"])
            for row in self.rows:
                stats = row.stats
                for m in metrics:
                    mean, sd = stats[m]
                    w.writerow([row.param, m, format(mean, ".10g"), format(sd, ".10g"), len(row.records)])
        return path


def run_seeds(master: int, repetitions: int) -> list[int]:
    seeds = [derive_seed(master, rep) for rep in range(repetitions)]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("seed collision")
    return seeds


def rotated_victims(master: int, n: int, repetitions: int) -> list[int]:
    """A different originator per repetition (cycling once all nodes were used)."""
    perm = np.random.default_rng(derive_seed(master, _VICTIM_PERM_TAG)).permutation(n)
    return [int(perm[r % n]) for r in range(repetitions)]


def _map(fn, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _hashrate_task(task) -> list[MetricsRecord]:
    cfg, h_values, backend = task
    overlay = build_overlay(cfg.topology, derive_seed(cfg.run.seed, _GRAPH_TAG))
    out = []
    for h in h_values:
        c = cfg.with_(attack__attacker_hashrate=h / 100.0)
        out.append(run_simulation(c, overlay=overlay, backend=backend).metrics)
    return out


def sweep_hashrate(
    base: SimConfig,
    h_values,
    repetitions: int | None = None,
    *,
    pools: bool | None = None,
    jobs: int | None = None,
    backend: str | None = None,
    name: str | None = None,
) -> SweepTable:
    """One row per attacker hash-rate percentage ``h``; ``R`` seeded runs per row."""
    R = base.run.repetitions if repetitions is None else repetitions
    if R < 1:
        raise ValueError("repetitions must be >= 1")
    h_values = [int(h) for h in h_values]
    for h in h_values:
        if not 1 <= h <= 99:
            raise ValueError(f"h={h} outside [1,99]")
    if pools is not None:
        base = base.with_(attack__pools_enabled=pools)
    if base.attack.attack is Attack.NONE:
        base = base.with_(attack__attack=Attack.FIFTY_ONE)
    seeds = run_seeds(base.run.seed, R)
    tasks = [(base.with_(run__seed=s, run__trace="chain"), h_values, backend) for s in seeds]
    per_rep = _map(_hashrate_task, tasks, jobs or base.run.jobs)
    default = "selfish" if base.attack.attack is Attack.SELFISH_MINING else "attack51"
    table = SweepTable(name or default, R, seeds)
    for i, h in enumerate(h_values):
        table.rows.append(SweepRow(str(h), [rec[i] for rec in per_rep]))
    return table


def sybil_param(label: str, fraction: float) -> str:
    return f"{label}@{fraction:.2f}"


def _sybil_task(task) -> list[list[MetricsRecord]]:
    cfg, graph_seed, reps, cells, backend = task
    overlay = build_overlay(cfg.topology, derive_seed(graph_seed, _GRAPH_TAG))
    out = []
    for seed, victim in reps:
        rec = []
        for proto, fraction in cells:
            c = cfg.with_(run__seed=seed, attack__sybil_fraction=fraction, attack__victim=victim)
            rec.append(run_simulation(replace(c, protocol=proto), overlay=overlay, backend=backend).metrics)
        out.append(rec)
    return out


def sweep_sybil(
    base: SimConfig,
    protocols=None,
    fractions=None,
    repetitions: int | None = None,
    *,
    jobs: int | None = None,
    backend: str | None = None,
    graphs: int | None = None,
) -> SweepTable:
    """Coverage per (protocol, Sybil fraction) cell.

    ``protocols`` holds ``name[:p|:stem_hops]`` strings or ``ProtocolParams``.
    Each repetition draws a new victim and a new Sybil set; within one
    repetition the Sybil sets are nested across fractions and shared across
    protocols. By default every repetition also draws a fresh graph; with
    ``graphs=G`` repetition ``r`` reuses the graph of repetition ``r % G``.
    """
    R = base.run.repetitions if repetitions is None else repetitions
    if R < 1:
        raise ValueError("repetitions must be >= 1")
    protocols = base.run.protocols if protocols is None else protocols
    fractions = base.run.sybil_fractions if fractions is None else fractions
    for f in fractions:
        if not 0.0 <= f < 1.0:
            raise ValueError(f"sybil fraction {f} outside [0,1)")
    params = [p if not isinstance(p, str) else protocol_from_spec(p, base.protocol) for p in protocols]
    base = base.with_(attack__attack=Attack.SYBIL, run__trace="chain")
    cells = [(p, float(f)) for p in params for f in fractions]
    seeds = run_seeds(base.run.seed, R)
    victims = rotated_victims(base.run.seed, base.topology.nodes, R)
    G = R if graphs is None else min(graphs, R)
    if G < 1:
        raise ValueError("graphs must be >= 1")
    tasks = [(base, seeds[g], list(zip(seeds, victims))[g::G], cells, backend) for g in range(G)]
    grouped = _map(_sybil_task, tasks, jobs or base.run.jobs)
    per_rep = [grouped[r % G][r // G] for r in range(R)]
    table = SweepTable("sybil", R, seeds)
    for i, (p, f) in enumerate(cells):
        table.rows.append(SweepRow(sybil_param(p.label(), f), [rec[i] for rec in per_rep]))
    return table


def run_baseline(base: SimConfig, repetitions: int | None = None, *, jobs: int | None = None, backend=None) -> SweepTable:
    """Attack-free runs; attacker columns are zero by construction."""
    R = base.run.repetitions if repetitions is None else repetitions
    if R < 1:
        raise ValueError("repetitions must be >= 1")
    base = base.with_(attack__attack=Attack.NONE, attack__attacker_hashrate=0.0, run__trace="chain")
    seeds = run_seeds(base.run.seed, R)
    tasks = [base.with_(run__seed=s) for s in seeds]
    records = _map(_baseline_task, [(t, backend) for t in tasks], jobs or base.run.jobs)
    return SweepTable("baseline", R, seeds, [SweepRow("none", records)])


def _baseline_task(task) -> MetricsRecord:
    cfg, backend = task
    return run_simulation(cfg, backend=backend).metrics
