"""Command-line front end: train, sweep, baseline, maccount.

Each command reads one INI config, runs the requested experiment, and
writes metrics.csv / sweep.csv / run.json plus rendered figures into
the output directory (default: runs/<command>-<confighash>).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import SWEEP_AXES, ConfigError, parse_config
from .experiments import baseline_digital, baseline_no_ms, mac_count, run, sweep

_INT_AXES = ("elements", "layers", "n_t")


def _parse_values(axis: str, text: str) -> list:
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ConfigError("sweep values must be nonempty")
    try:
        if axis in _INT_AXES:
            return [int(p) for p in parts]
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value for axis {axis!r}: {exc}") from None


def _load_config(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seeds=(args.seed,))
    return cfg


def _out_dir(args, cfg, command: str) -> Path:
    if args.out_dir is not None:
        return Path(args.out_dir)
    return Path("runs") / f"{command}-{cfg.config_hash()}"


def _add_common(sub) -> None:
    sub.add_argument("config", help="path to an INI experiment config")
    sub.add_argument("--seed", type=int, default=None, help="override the config's seed list with one seed")
    sub.add_argument("--out-dir", default=None, help="directory for CSV/JSON/figure outputs")
    sub.add_argument("--data-dir", default=None, help="directory holding MNIST IDX files")


def _report(record, out: Path) -> None:
    print(f"config {record.config_hash}  accuracy {record.accuracy_mean:.4f} +/- {record.accuracy_std:.4f}")
    print(f"mean emitted power {record.mean_power:.6g} W  total MACs {record.macs.get('total', 0)}")
    print(f"outputs written to {out}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="minn",
        description="goal-oriented transceiver training over metasurface-programmable channels",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    p_train = commands.add_parser("train", help="run the configured training per seed")
    _add_common(p_train)

    p_sweep = commands.add_parser("sweep", help="rerun the config across one swept axis")
    _add_common(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma or space separated axis values")

    p_base = commands.add_parser("baseline", help="surface-free or fully digital reference run")
    _add_common(p_base)
    p_base.add_argument("--kind", required=True, choices=("no-ms", "digital"))

    p_mac = commands.add_parser("maccount", help="print per-module multiply-accumulate totals")
    _add_common(p_mac)

    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "train":
            out = _out_dir(args, cfg, "train")
            record = run(cfg, out_dir=out, data_dir=args.data_dir)
            _report(record, out)
        elif args.command == "sweep":
            values = _parse_values(args.axis, args.values)
            out = _out_dir(args, cfg, f"sweep-{args.axis}")
            records, rows = sweep(cfg, args.axis, values, out_dir=out, data_dir=args.data_dir)
            for value, record in zip(values, records):
                print(
                    f"{args.axis}={value}  accuracy {record.accuracy_mean:.4f} +/- {record.accuracy_std:.4f}"
                    f"  power {record.mean_power:.6g} W"
                )
            print(f"outputs written to {out}")
        elif args.command == "baseline":
            out = _out_dir(args, cfg, f"baseline-{args.kind}")
            runner = baseline_no_ms if args.kind == "no-ms" else baseline_digital
            record = runner(cfg, out_dir=out, data_dir=args.data_dir)
            _report(record, out)
        else:
            macs = mac_count(cfg)
            for name, count in macs.items():
                print(f"{name},{count}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
