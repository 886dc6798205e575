"""``overtake`` command line.

Exit codes: 0 success, 1 usage error (bad flags, config or input files),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import commands
from .config import ConfigError, load_config

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("overtake")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # shared by the top-level parser and every subcommand so the flags work in
    # either position; the subcommand copies must not clobber earlier values
    d = argparse.SUPPRESS if suppress else None
    p = _Parser(add_help=False)
    p.add_argument("--config", default=d, help="JSON config file (merged over the defaults)")
    p.add_argument("--seed", type=int, default=d, help="master seed")
    p.add_argument("--out", default=d, help="output directory (default: runs/<command>)")
    p.add_argument("--no-plots", action="store_true",
                   default=argparse.SUPPRESS if suppress else False,
                   help="skip PNG figures")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="overtake", parents=[_global_flags(False)],
                description="Head-to-head overtaking: racelines, PPO training, "
                            "evaluation and opponent-fusion replay.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    g = [_global_flags(True)]

    s = sub.add_parser("gen-raceline", parents=g, help="optimize a minimum-curvature raceline")
    s.add_argument("--track", help="centerline CSV (x,y,w_left,w_right); default: the corridor")

    s = sub.add_parser("train", parents=g, help="train the overtaking policy with PPO")
    s.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in --out")

    s = sub.add_parser("eval", parents=g, help="evaluate a policy against the opponent")
    s.add_argument("--checkpoint", help="policy checkpoint (.npz); default: untrained policy")
    s.add_argument("--episodes", type=int)
    s.add_argument("--fusion", action="store_true",
                   help="observe the opponent through LiDAR/camera fusion only")

    s = sub.add_parser("fuse-replay", parents=g, help="replay a measurement log through the UKF")
    s.add_argument("--log", required=True, help="measurement log CSV")
    s.add_argument("--truth", required=True, help="ground-truth CSV")
    s.add_argument("--warmup", type=float, help="seconds excluded from RMSE")

    s = sub.add_parser("gen-log", parents=g, help="write a synthetic measurement log")
    s.add_argument("--mode", choices=("direct", "perception"))
    return p


def run(args) -> dict:
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out) if args.out else Path("runs") / args.command
    plot = not args.no_plots
    if args.command == "gen-raceline":
        return commands.cmd_gen_raceline(cfg, out, args.track, plot)
    if args.command == "train":
        return commands.cmd_train(cfg, out, args.resume, plot)
    if args.command == "eval":
        if args.episodes is not None and args.episodes < 1:
            raise UsageError("--episodes must be >= 1")
        return commands.cmd_eval(cfg, out, args.checkpoint, args.episodes,
                                 True if args.fusion else None, plot)
    if args.command == "fuse-replay":
        return commands.cmd_fuse_replay(cfg, out, args.log, args.truth, args.warmup, plot)
    if args.command == "gen-log":
        return commands.cmd_gen_log(cfg, out, args.mode)
    raise UsageError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"overtake {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print(f"overtake {args.command}: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"overtake {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
