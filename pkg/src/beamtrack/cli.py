"""Command-line entry point: ``beamtrack <verb> [--config PATH] [--seed N] [--out PATH] [--jobs N]``."""
from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, rl
from .channel import format_trace_line, generate_trace, write_trace

log = logging.getLogger("beamtrack")


def _spec(args) -> harness.ExperimentSpec:
    if args.config:
        return harness.parse_config(args.config)
    return harness.parse_config_text("", "<defaults>")


@contextlib.contextmanager
def _output(path):
    if path is None or str(path) == "-":
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _sweep(spec, args) -> int:
    with _output(args.out) as fh:
        sink = harness.CsvSink(fh)
        rows = harness.run_sweep(spec, args.seed, args.jobs, on_row=sink.write)
    if getattr(args, "plot", None):
        plot_dir = args.plot_dir or (Path(args.out).parent if args.out else Path("."))
        for p in harness.emit_plot_data(rows, args.plot, plot_dir):
            log.info("wrote %s", p)
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        log.warning("%d of %d runs failed", failed, len(rows))
    return 0


def cmd_run(args) -> int:
    spec = _spec(args).with_values(experiment__sweep="none", experiment__values=())
    return _sweep(spec, args)


def cmd_sweep(args) -> int:
    return _sweep(_spec(args), args)


def cmd_train(args) -> int:
    spec = _spec(args)
    scenario = spec.scenario_config()
    cfg = spec.agent_config()
    seed = spec["experiment.seeds"][0]
    rng = harness.job_rng(args.seed, seed)
    with _output(args.out) as fh:
        sink = harness.CsvSink(fh, harness.TRAIN_COLUMNS)

        def emit(row):
            sink.write({"schema_version": harness.SCHEMA_VERSION, "seed": seed, **row})

        agent, _ = rl.train(cfg, scenario, spec.channel(scenario), rng, spec.env_params(),
                            wall_time=args.wall_time, on_episode=emit)
    ckpt = args.checkpoint or spec["experiment.checkpoint"]
    if ckpt:
        rl.save_agent(agent, ckpt)
        log.info("saved checkpoint to %s", ckpt)
    return 0


def cmd_eval(args) -> int:
    spec = _spec(args)
    ckpt = args.checkpoint or spec["experiment.checkpoint"]
    if not ckpt:
        raise harness.ConfigError("eval needs --checkpoint or experiment.checkpoint")
    spec = spec.with_values(experiment__mode="ddpg-eval", experiment__checkpoint=ckpt,
                            experiment__sweep="none", experiment__values=())
    return _sweep(spec, args)


def cmd_gen_trace(args) -> int:
    spec = _spec(args)
    scenario = spec.scenario_config()
    rng = np.random.default_rng([int(args.seed), 0])
    snaps = generate_trace(scenario, n_records=args.records, n_paths=args.paths,
                           rho=spec["tracker.rho"], rng=rng)
    header = (f"synthetic multipath trace: {args.paths} paths, {args.records} records, "
              f"seed {args.seed}\nstep,position_m,L then alpha_re,alpha_im,phi_a,phi_d per path")
    if args.out is None or args.out == "-":
        for step, snap in enumerate(snaps):
            sys.stdout.write(format_trace_line(step, snap) + "\n")
    else:
        write_trace(args.out, snaps, header)
    return 0


def cmd_emit_defaults(args) -> int:
    spec = _spec(args) if args.config else harness.ExperimentSpec()
    with _output(args.out) as fh:
        fh.write(harness.emit_defaults(spec))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--out", help="output path ('-' or omitted: stdout)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="beamtrack", description=__doc__)
    sub = p.add_subparsers(dest="verb", required=True)
    for name, fn, help_ in (("run", cmd_run, "single experiment over the configured seeds"),
                            ("sweep", cmd_sweep, "sweep the configured axis")):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("--plot", metavar="FIGURE_ID", help="also write TSV plot data")
        sp.add_argument("--plot-dir", help="directory for plot data (default: next to --out)")
        sp.set_defaults(fn=fn)
    sp = sub.add_parser("train", parents=[common], help="train a DDPG agent, log episodes as CSV")
    sp.add_argument("--checkpoint", help="where to save the trained networks")
    sp.add_argument("--wall-time", action="store_true", help="record per-episode wall time")
    sp.set_defaults(fn=cmd_train)
    sp = sub.add_parser("eval", parents=[common], help="evaluate a saved DDPG agent")
    sp.add_argument("--checkpoint", help="agent checkpoint to load")
    sp.set_defaults(fn=cmd_eval)
    sp = sub.add_parser("gen-trace", parents=[common], help="write a synthetic multipath trace")
    sp.add_argument("--records", type=int, default=600)
    sp.add_argument("--paths", type=int, default=3)
    sp.set_defaults(fn=cmd_gen_trace)
    sp = sub.add_parser("emit-defaults", parents=[common], help="print the default config")
    sp.set_defaults(fn=cmd_emit_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("beamtrack: --jobs must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except harness.ConfigError as exc:
        print(f"beamtrack: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"beamtrack: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
