"""Registry of the architectures that scenarios can pick."""

import math
import typing

from . import Convolution, Dense, Flatten, MaxPool, ModelArchitecture, ReLU
from .layers import Shape


def paper_cnn(input_shape: Shape = (1, 28, 28), num_classes: int = 10) -> ModelArchitecture:
    c, h, w = input_shape
    # two 5x5 valid convolutions, each followed by 2x2 pooling
    h = ((h - 4) // 2 - 4) // 2
    w = ((w - 4) // 2 - 4) // 2
    return ModelArchitecture(
        layers=(
            Convolution(c, 8, (5, 5)),
            ReLU(),
            MaxPool(2, 2),
            Convolution(8, 16, (5, 5)),
            ReLU(),
            MaxPool(2, 2),
            Flatten(),
            Dense(16 * h * w, 120),
            ReLU(),
            Dense(120, num_classes),
        ),
        input_shape=input_shape,
        num_classes=num_classes)


def fast_mlp(input_shape: Shape = (1, 28, 28), num_classes: int = 10) -> ModelArchitecture:
    return ModelArchitecture(
        layers=(
            Flatten(),
            Dense(math.prod(input_shape), 64),
            ReLU(),
            Dense(64, 32),
            ReLU(),
            Dense(32, num_classes),
        ),
        input_shape=input_shape,
        num_classes=num_classes)


PROFILES: typing.Mapping[str, typing.Callable[[Shape, int], ModelArchitecture]] = {
    'paper_cnn': paper_cnn,
    'fast_mlp': fast_mlp,
}


def get_profile(name: str) -> typing.Callable[[Shape, int], ModelArchitecture]:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"invalid architecture profile {name} (supported profiles: {', '.join(PROFILES)})")
