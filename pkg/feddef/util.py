#! /usr/bin/env python3

# SPDX-License-Identifier: GPL-3.0-or-later
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.

from contextlib import contextmanager
import os
import sys
import typing

import numpy as np

dataclass_args: dict[str, bool] = {} \
    if sys.version_info < (3, 10) \
    else {'slots': True}


class FedDefError(Exception):
    @property
    def message(self) -> str:
        return str(self.args[0])


def derive_seed(*counters: int) -> int:
    """Return a 63-bit seed that depends only on ``counters``, so that the
       order in which clients, rounds or epochs are processed does not
       change any random stream."""
    state = np.random.SeedSequence([abs(int(c)) for c in counters]).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


def rng_for(*counters: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*counters))


@contextmanager
def open_unlink_on_error(filename: str) -> typing.Iterator[typing.TextIO]:
    # do not unlink an existing file until it has been opened
    do_unlink = not os.path.exists(filename)
    try:
        with open(filename, "w", encoding="utf-8", newline="") as f:
            # and never unlink a non-regular file anyway
            do_unlink = do_unlink or os.path.isfile(filename)
            yield f
    except Exception as e:
        if do_unlink and os.path.exists(filename):
            os.unlink(filename)
        raise e
