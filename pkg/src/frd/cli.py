"""Command line entry point: ``frd run | presets | stats``."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import (MODES, TABLE1, load_config, preset, read_rows, stats_by_cell, sweep,
                      write_stats)


def parse_int_list(text: str) -> list[int]:
    """``"1,2,4"`` or ``"0-9"`` or a mix like ``"0-2,7"``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list {text!r}")
    return out


def _setting(arg: str):
    if arg.isdigit():
        return preset(int(arg))
    return load_config(arg)


def cmd_run(args) -> int:
    base = _setting(args.setting)
    overrides = {"mode": args.mode}
    for key in ("threshold", "S", "E", "I", "n", "hidden_layers", "episode_cap"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    base = base.replace(**overrides)
    rows, stats = sweep([base], args.agents, args.seeds, out_dir=args.out, jobs=args.jobs)
    w = sys.stdout.write
    w("setting,mode,agents,n,mean,median,q25,q75,min,max\n")
    for (setting, mode, agents), s in stats.items():
        w(f"{setting},{mode},{agents},{s.n},{s.mean:.2f},{s.median:.2f},{s.q25:.2f},"
          f"{s.q75:.2f},{s.min:.0f},{s.max:.0f}\n")
    return 0


def cmd_presets(args) -> int:
    print("setting  S^4      E   I    n    hidden_layers")
    for k, (S, E, I, n, layers) in TABLE1.items():
        print(f"{k:<8} {S}^4{'':<{5 - len(str(S))}} {E:<3} {I:<4} {n:<4} {layers}")
    return 0


def cmd_stats(args) -> int:
    stats = stats_by_cell(read_rows(args.csv))
    if args.out:
        write_stats(args.out, stats)
    for (setting, mode, agents), s in stats.items():
        print(f"{setting},{mode},{agents},{s.n},{s.mean!r},{s.median!r},{s.q25!r},{s.q75!r},"
              f"{s.min!r},{s.max!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frd", description="Federated reinforcement distillation on CartPole")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one setting over agent counts and seeds")
    r.add_argument("--setting", required=True, help="Table 1 preset number (1-7) or a config file")
    r.add_argument("--mode", choices=MODES, default="frd_policy")
    r.add_argument("--agents", type=parse_int_list, default=[1], help="e.g. 1,2,4")
    r.add_argument("--seeds", type=parse_int_list, default=[0], help="e.g. 0-9 or 1,5,7")
    r.add_argument("--threshold", type=float)
    r.add_argument("--S", type=int, help="override subsections per dimension")
    r.add_argument("--E", type=int, help="override exchange period")
    r.add_argument("--I", type=int, help="override initial learning episodes")
    r.add_argument("--n", type=int, help="override hidden width")
    r.add_argument("--hidden-layers", dest="hidden_layers", type=int)
    r.add_argument("--episode-cap", dest="episode_cap", type=int)
    r.add_argument("--out", default="out")
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    sub.add_parser("presets", help="list Table 1 presets").set_defaults(func=cmd_presets)

    s = sub.add_parser("stats", help="recompute statistics from a results CSV")
    s.add_argument("csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
