"""Registry of available aggregation strategies."""

from . import FedAvgStrategy, Strategy
from .feddefender import FedDefenderStrategy
from .normclip import NormClippingStrategy
import typing

STRATEGIES: typing.MutableMapping[str, typing.Type[Strategy]] = {}
STRATEGIES['none'] = FedAvgStrategy
STRATEGIES['normclip'] = NormClippingStrategy
STRATEGIES['feddefender'] = FedDefenderStrategy

# column names used in the result files
METHOD_NAMES = {key: cls.NAME for key, cls in STRATEGIES.items()}
