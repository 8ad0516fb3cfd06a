"""``sim`` command-line entry point.

    sim attack51 --config exp.ini --set h_values=10,30,50 --out results
    sim sybil --config exp.ini --set nodes=10000 --set edges=40000

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .agents import Attack
from .config import ConfigError, SimConfig, parse_config
from .engine import run_simulation, validate_config
from .experiments import run_baseline, sweep_hashrate, sweep_sybil
from .overlay import dump_edge_list

log = logging.getLogger("ledgersim")

COMMANDS = ("attack51", "selfish", "sybil", "baseline")
_ATTACK = {
    "attack51": Attack.FIFTY_ONE,
    "selfish": Attack.SELFISH_MINING,
    "sybil": Attack.SYBIL,
    "baseline": Attack.NONE,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sim", description="Blockchain attack simulations over gossip overlays.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="sectioned key=value config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config value (section.key or a unique key); repeatable")  # fmt: skip
    ap.add_argument("--workers", type=int, help="threads per simulation (results do not depend on it)")
    ap.add_argument("--jobs", type=int, help="independent repetitions run in parallel processes")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--backend", choices=("auto", "numba", "numpy"), default=None)
    ap.add_argument("--dump-graph", action="store_true", help="write the overlay of the first run")
    ap.add_argument("--dump-trace", action="store_true", help="write the event trace of the first run")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def pool_settings(cfg: SimConfig) -> tuple[bool, ...]:
    return {"on": (True,), "off": (False,), "both": (False, True)}[cfg.run.pools]


def resolve_config(args) -> SimConfig:
    overrides = list(args.overrides)
    for flag, key in ((args.workers, "run.workers"), (args.jobs, "run.jobs"), (args.out, "run.out")):
        if flag is not None:
            overrides.append(f"{key}={flag}")
    cfg = parse_config(args.config, overrides)
    attack = _ATTACK[args.command]
    if cfg.attack.attack is not attack:
        if args.config and cfg.attack.attack is not Attack.NONE:
            raise ConfigError(f"[attack] attack={cfg.attack.attack.value} conflicts with command {args.command!r}")
        try:
            cfg = cfg.with_(attack__attack=attack)
        except ValueError as exc:
            raise ConfigError(f"[attack] {exc}") from None
    try:
        validate_config(cfg)
        if args.command in ("attack51", "selfish"):
            for h in cfg.run.h_values:
                for on in pool_settings(cfg):
                    validate_config(cfg.with_(attack__attacker_hashrate=h / 100.0, attack__pools_enabled=on))
        if args.command == "sybil":
            for f in cfg.run.sybil_fractions:
                validate_config(cfg.with_(attack__sybil_fraction=f))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def run_command(command: str, cfg: SimConfig, *, backend=None, dump_graph=False, dump_trace=False) -> list[Path]:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if command in ("attack51", "selfish"):
        for pools in pool_settings(cfg):
            c = cfg.with_(attack__pools_enabled=pools, run__pools="on" if pools else "off")
            log.info("%s sweep: %d h values x %d runs, pools %s", command, len(c.run.h_values), c.run.repetitions,
                     "on" if pools else "off")  # fmt: skip
            table = sweep_hashrate(c, c.run.h_values, backend=backend, name=command)
            written.append(table.to_csv(out / f"{command}_{c.digest()}.csv"))
    elif command == "sybil":
        table = sweep_sybil(cfg, backend=backend)
        written.append(table.to_csv(out / f"sybil_{cfg.digest()}.csv"))
    else:
        table = run_baseline(cfg, backend=backend)
        written.append(table.to_csv(out / f"baseline_{cfg.digest()}.csv"))

    if dump_graph or dump_trace:
        from .experiments import rotated_victims, run_seeds

        first = cfg.with_(run__seed=run_seeds(cfg.run.seed, 1)[0])
        victim = rotated_victims(cfg.run.seed, cfg.topology.nodes, 1)[0] if command == "sybil" else None
        if command in ("attack51", "selfish") and cfg.run.h_values:
            first = first.with_(attack__attacker_hashrate=cfg.run.h_values[0] / 100.0)
        if command == "sybil" and cfg.run.sybil_fractions:
            first = first.with_(attack__sybil_fraction=cfg.run.sybil_fractions[0])
        res = run_simulation(first, victim=victim, backend=backend)
        if dump_graph:
            written.append(out / "graph.txt")
            dump_edge_list(res.overlay, written[-1])
        if dump_trace:
            written.append(out / "trace.tsv")
            res.trace.dump(written[-1])

    manifest = out / "manifest.txt"
    manifest.write_text(
        f"# command = {command}\n# master_seed = {cfg.run.seed}\n# digest = {cfg.digest()}\n"
        + "".join(f"# output = {p.name}\n" for p in written)
        + cfg.to_text()
    )
    return written


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"sim: configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        paths = run_command(
            args.command, cfg, backend=args.backend, dump_graph=args.dump_graph, dump_trace=args.dump_trace
        )
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"sim: error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
