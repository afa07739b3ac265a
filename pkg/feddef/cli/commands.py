"""Implementation of the commands for the feddef tool."""

# SPDX-License-Identifier: GPL-3.0-or-later
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

import argparse
import sys
import typing

from .. import experiments
from ..config import ScenarioConfig, build_config, read_config_file
from ..metrics import RoundRecord

VALID_OPTIONS = {
    'timing': 'Show execution time after every command.',
}

_OPTIONS = {key: False for key in VALID_OPTIONS.keys()}


class FedCommand:

    NAME: typing.Optional[tuple[str, ...]] = None

    @staticmethod
    def positive_int(value: str) -> int:
        number = int(value)
        if number <= 0:
            raise argparse.ArgumentTypeError(f"Number {value} must be positive.")
        return number

    @classmethod
    def args(self, parser: argparse.ArgumentParser) -> None:
        """Setup argument parser"""
        parser.add_argument("--config", metavar="FILE",
                            help="Read scenario settings from a key = value file")
        parser.add_argument("--desk", action="store_true",
                            help="Start from the laptop-sized preset")
        parser.add_argument("--timing", action="store_true",
                            help=VALID_OPTIONS['timing'])
        level = parser.add_mutually_exclusive_group()
        level.add_argument("--verbose", action="store_true",
                           help="Log per-client progress")
        level.add_argument("--quiet", action="store_true",
                           help="Only print warnings and errors")
        group = parser.add_argument_group("scenario settings")
        for key in ScenarioConfig.keys():
            names = [f"--{key}"]
            if '_' in key:
                names.append(f"--{key.replace('_', '-')}")
            group.add_argument(*names, dest=key, metavar="VALUE", default=argparse.SUPPRESS,
                               help=ScenarioConfig.field_help(key))

    @staticmethod
    def config(args: argparse.Namespace) -> ScenarioConfig:
        file_values = read_config_file(args.config) if args.config else {}
        flag_values = {key: getattr(args, key) for key in ScenarioConfig.keys() if hasattr(args, key)}
        return build_config(file_values, flag_values, desk=args.desk)

    @staticmethod
    def progress(args: argparse.Namespace) -> experiments.Progress:
        return experiments.eat if args.quiet else print

    def run(self, args: argparse.Namespace) -> None:
        pass

    def execute(self, args: argparse.Namespace) -> None:
        from resource import getrusage, RUSAGE_SELF
        import time

        _OPTIONS['timing'] = args.timing
        r1 = getrusage(RUSAGE_SELF)
        t1 = time.monotonic()
        try:
            self.run(args)
        finally:
            r2 = getrusage(RUSAGE_SELF)
            t2 = time.monotonic()
            if _OPTIONS['timing']:
                print('wall {:.3f}s  user {:.3f}s   sys {:.3f}s'
                      .format(t2 - t1, r2.ru_utime - r1.ru_utime, r2.ru_stime - r1.ru_stime),
                      file=sys.stderr)

    @staticmethod
    def report(records: typing.Sequence[RoundRecord], path: str) -> None:
        print(f"{len(records)} rounds written to {path}", file=sys.stderr)


class RunCommand(FedCommand):
    """Runs the scenario with a single defense."""
    NAME = ("run",)

    def run(self, args: argparse.Namespace) -> None:
        config = self.config(args)
        self.report(experiments.cmd_run(config, self.progress(args)), config.output_csv)


class CompareCommand(FedCommand):
    """Runs FedAvg, NormClipping and FedDefender side by side."""
    NAME = ("compare",)

    def run(self, args: argparse.Namespace) -> None:
        config = self.config(args)
        self.report(experiments.cmd_compare(config, self.progress(args)), config.output_csv)


class SweepScaleCommand(FedCommand):
    """Runs the scenario once per attack scale factor."""
    NAME = ("sweep-scale",)

    @classmethod
    def args(self, parser: argparse.ArgumentParser) -> None:
        super().args(parser)
        parser.add_argument("scale", metavar="X", nargs="*", type=FedCommand.positive_int,
                            help="Attack scales (default: the scales setting)")

    def run(self, args: argparse.Namespace) -> None:
        config = self.config(args)
        self.report(experiments.cmd_sweep_scale(config, args.scale, self.progress(args)),
                    config.output_csv)


class SweepThetaCommand(FedCommand):
    """Runs FedDefender once per malicious confidence threshold."""
    NAME = ("sweep-theta",)

    @classmethod
    def args(self, parser: argparse.ArgumentParser) -> None:
        super().args(parser)
        parser.add_argument("thresholds", metavar="THETA", nargs="*", type=float,
                            help="Thresholds (default: the thetas setting)")

    def run(self, args: argparse.Namespace) -> None:
        config = self.config(args)
        bad = [t for t in args.thresholds if not 0 <= t <= 1]
        if bad:
            raise argparse.ArgumentError(None, f"thresholds outside [0, 1]: {bad}")
        self.report(experiments.cmd_sweep_theta(config, args.thresholds, self.progress(args)),
                    config.output_csv)


class BenignCommand(FedCommand):
    """Measures the accuracy of every defense with no attacker."""
    NAME = ("benign",)

    def run(self, args: argparse.Namespace) -> None:
        config = self.config(args)
        self.report(experiments.cmd_benign(config, self.progress(args)), config.output_csv)
