"""Command-line entry point: ``nomsim simulate | compare | generate``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, SimConfig, load_config
from .dram import AddressError
from .sim import address_map, compare, format_comparison, run
from .workload import PRESETS, TraceError, dump_trace, generate, load_trace, preset


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nomsim", description="Cycle-level simulator of inter-bank copy in stacked DRAM.")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("simulate", help="run one configuration")
    s.add_argument("--config", required=True, type=Path)
    s.add_argument("--trace", type=Path, help="trace file; default generates one from the config's workload keys")
    s.add_argument("--seed", type=int, help="override the config seed")
    s.add_argument("--out", type=Path, help="write the key-value report here")

    c = sub.add_parser("compare", help="run several configurations on one trace")
    c.add_argument("--configs", required=True, help="comma-separated config files")
    c.add_argument("--trace", required=True, type=Path)
    c.add_argument("--out", type=Path, help="write one key-value report per config, separated by blank lines")

    g = sub.add_parser("generate", help="write a synthetic trace")
    g.add_argument("--preset", default="fileCopy60", choices=sorted(PRESETS))
    g.add_argument("--count", type=int, default=10000)
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--interarrival", type=float, default=SimConfig().interarrival)
    g.add_argument("--copy-bytes", type=int, default=4096)
    g.add_argument("--config", type=Path, help="take geometry and address map from this config")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.cmd == "simulate":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.with_(seed=args.seed)
            trace = load_trace(args.trace) if args.trace else None
            rep = run(cfg, trace)
            sys.stdout.write(rep.table())
            if args.out:
                args.out.write_text(rep.to_text(), encoding="utf-8")
            return 2 if rep["incomplete"] else 0
        if args.cmd == "compare":
            cfgs = [load_config(Path(x.strip())) for x in args.configs.split(",") if x.strip()]
            rows = compare(cfgs, load_trace(args.trace))
            sys.stdout.write(format_comparison(rows))
            if args.out:
                args.out.write_text("\n".join(r["report"].to_text() for r in rows), encoding="utf-8")
            return 0
        cfg = load_config(args.config) if args.config else SimConfig()
        mix = preset(args.preset, count=args.count, seed=args.seed, interarrival=args.interarrival,
                     copy_bytes=args.copy_bytes)
        dump_trace(generate(mix, address_map(cfg)), args.out)
        return 0
    except (ConfigError, TraceError, AddressError, ValueError, OSError) as e:
        print(f"nomsim: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
