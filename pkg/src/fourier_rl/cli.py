"""Command line entry point: ``fourier-rl <subcommand> ...``.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import runner
from .checkpoint import CheckpointFormatError
from .config import ConfigError, load_config

log = logging.getLogger("fourier_rl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _config(args):
    return load_config(args.config, args.set or ())


def do_train(args):
    return runner.cmd_train(_config(args))


def do_sweep(args):
    return runner.cmd_sweep_beta(_config(args))


def do_dp_fit(args):
    return runner.cmd_dp_fit(_config(args))


def do_diagnose(args):
    out = args.out or Path(args.checkpoint).with_suffix("").name + "-diag"
    return runner.cmd_diagnose(args.checkpoint, args.replay, args.sigma, out,
                               batch_size=args.batch_size, bins=args.bins, seed=args.seed)


def do_eval_noise(args):
    out = args.out or Path(args.checkpoint).with_suffix("").name + "-eval"
    return runner.cmd_eval_noise(_config(args), args.checkpoint, out, tune=args.tune, seed=args.seed)


def do_plot(args):
    from .plots import render_dir

    return render_dir(Path(args.run_dir))


def build_parser():
    p = argparse.ArgumentParser(prog="fourier-rl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="INI experiment config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        return sp

    with_config(sub.add_parser("train", help="train SAC per seed")).set_defaults(fn=do_train)
    with_config(sub.add_parser("sweep-beta", help="sweep initial beta")).set_defaults(fn=do_sweep)
    with_config(sub.add_parser("dp-fit", help="value iteration + supervised warmup")).set_defaults(fn=do_dp_fit)

    d = sub.add_parser("diagnose", help="representation diagnostics from a checkpoint")
    d.add_argument("checkpoint")
    d.add_argument("replay")
    d.add_argument("--sigma", type=float, default=0.0)
    d.add_argument("--batch-size", type=int, default=256)
    d.add_argument("--bins", type=int, default=20)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(fn=do_diagnose)

    e = with_config(sub.add_parser("eval-noise", help="evaluate a checkpoint under observation noise"))
    e.add_argument("checkpoint")
    e.add_argument("--tune", action="store_true", help="pick low/medium/high levels instead")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(fn=do_eval_noise)

    pl = sub.add_parser("plot", help="render SVG figures from a run directory's CSVs")
    pl.add_argument("run_dir")
    pl.set_defaults(fn=do_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (runner.RunFailure, CheckpointFormatError, OSError, KeyError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in out if isinstance(out, list) else [out]:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
