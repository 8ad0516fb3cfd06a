"""Compare the numba and numpy propagation backends on whole simulations.

    python3 benchmarks/bench_kernels.py --repeat 3

Each scenario runs once per backend to warm up (numba compiles or loads its
cache), then ``--repeat`` timed runs; the median is reported together with the
trace digest, which must agree across backends.
"""

from __future__ import annotations

import argparse
import statistics
import time

from ledgersim._accel import NUMBA_AVAILABLE
from ledgersim.agents import Attack
from ledgersim.config import SimConfig
from ledgersim.engine import build_overlay, run_simulation
from ledgersim.gossip import Protocol


def scenarios(scale: float):
    n_chain = max(50, int(500 * scale))
    chain = SimConfig().with_(
        topology__nodes=n_chain, topology__edges=4 * n_chain, mining__total_steps=max(20, int(400 * scale)),
        attack__attack=Attack.FIFTY_ONE, attack__attacker_hashrate=0.3,
    )  # fmt: skip
    yield "chain broadcast", chain
    yield "chain full trace", chain.with_(run__trace="full")
    n = max(200, int(10000 * scale))
    sybil = SimConfig().with_(
        topology__nodes=n, topology__edges=4 * n, attack__attack=Attack.SYBIL, attack__sybil_fraction=0.2,
    )  # fmt: skip
    for proto in (Protocol.BROADCAST, Protocol.FIXED_PROBABILITY, Protocol.DANDELION_PM):
        yield f"sybil {proto.value}", sybil.with_(protocol__protocol=proto, protocol__p=0.7)


def bench(cfg, backend: str, repeat: int):
    overlay = build_overlay(cfg.topology, cfg.run.seed)
    first = run_simulation(cfg, overlay=overlay, backend=backend)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_simulation(cfg, overlay=overlay, backend=backend)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), first.trace.digest()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies node and step counts")
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if NUMBA_AVAILABLE else [])
    print(f"{'scenario':<28}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, cfg in scenarios(args.scale):
        res = {b: bench(cfg, b, args.repeat) for b in backends}
        if len({d for _, d in res.values()}) != 1:
            raise SystemExit(f"{name}: traces differ between backends")
        row = f"{name:<28}" + "".join(f"{res[b][0]:>11.3f}s" for b in backends)
        if len(backends) > 1:
            row += f"{res['numpy'][0] / res['numba'][0]:>11.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
