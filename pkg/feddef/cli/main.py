"""Entry point of the feddef tool."""

# SPDX-License-Identifier: GPL-3.0-or-later
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

import argparse
import logging
import sys
import typing

from .commands import FedCommand
from ..config import ConfigError
from ..util import FedDefError

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2


class MyArgumentParser(argparse.ArgumentParser):
    def __init__(self, *args: typing.Any, **kwargs: typing.Any) -> None:
        kwargs.setdefault('exit_on_error', False)
        super().__init__(*args, **kwargs)

    def error(self, message: str) -> typing.NoReturn:
        raise argparse.ArgumentError(None, f"{self.prog}: error: {message}" "")


PARSER = MyArgumentParser(prog="feddef", description="Federated learning backdoor defense simulator")


def setup_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, force=True,
                        format="%(levelname)s %(name)s: %(message)s")


def dispatch(argv: typing.Sequence[str]) -> int:
    try:
        args = PARSER.parse_args(argv)
    except argparse.ArgumentError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    if not hasattr(args, 'cmdclass'):
        PARSER.print_help(sys.stderr)
        return EXIT_INVALID

    setup_logging(args)
    try:
        args.cmdclass().execute(args)
    except (ConfigError, argparse.ArgumentError) as e:
        print(e.message if isinstance(e, ConfigError) else e, file=sys.stderr)
        return EXIT_INVALID
    except FedDefError as e:
        print(e.message, file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        print(e, file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


def init_subparsers() -> None:
    subparsers = PARSER.add_subparsers(title="subcommands", help=None, parser_class=MyArgumentParser)
    for cls in FedCommand.__subclasses__():
        for n in cls.NAME:  # type: ignore
            subp = subparsers.add_parser(n, help=cls.__doc__, description=cls.__doc__)
            cls.args(subp)
            subp.set_defaults(cmd=n)
            subp.set_defaults(cmdclass=cls)


init_subparsers()
