"""Abstract classes for aggregating client updates into a global model."""

import abc
import concurrent.futures as conc
import dataclasses
import typing

from ..federation import ClientUpdate, fedavg_aggregate
from ..nn import ModelArchitecture, ParameterSet
from ..util import FedDefError, dataclass_args


class DefenseError(FedDefError):
    pass


@dataclasses.dataclass(frozen=True, **dataclass_args)
class DefenseConfig:
    theta: float = 0.5
    probe_count: int = 100
    activation_threshold: float = 0.0
    probe_seed: int = 0
    norm_bound: float = 3.0
    # when off, clients above theta are penalized like the others instead of discarded
    discard_above_theta: bool = True

    def __post_init__(self) -> None:
        if not 0 <= self.theta <= 1:
            raise DefenseError(f"theta outside [0, 1]: {self.theta}")
        if self.probe_count < 1:
            raise DefenseError(f"probe count must be at least 1: {self.probe_count}")
        if not self.norm_bound > 0:
            raise DefenseError(f"norm bound must be positive: {self.norm_bound}")


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class AggregationResult:
    params: ParameterSet
    confidence: typing.Mapping[int, float] = dataclasses.field(default_factory=dict)
    adjusted_counts: typing.Mapping[int, int] = dataclasses.field(default_factory=dict)


class Strategy(metaclass=abc.ABCMeta):
    NAME: typing.ClassVar[str]

    @classmethod
    @abc.abstractmethod
    def from_config(cls, arch: ModelArchitecture, cfg: DefenseConfig,
                    executor: typing.Optional[conc.Executor] = None) -> 'Strategy':
        pass

    @abc.abstractmethod
    def aggregate(self, global_prev: ParameterSet, updates: typing.Sequence[ClientUpdate],
                  round_index: int) -> AggregationResult:
        """Build the next global model.  Only runs on the orchestrator thread."""
        pass


class FedAvgStrategy(Strategy):
    NAME = "FedAvg"

    @classmethod
    def from_config(cls, arch: ModelArchitecture, cfg: DefenseConfig,
                    executor: typing.Optional[conc.Executor] = None) -> 'Strategy':
        return cls()

    def aggregate(self, global_prev: ParameterSet, updates: typing.Sequence[ClientUpdate],
                  round_index: int) -> AggregationResult:
        return AggregationResult(
            fedavg_aggregate(updates),
            adjusted_counts={u.client_id: u.reported_example_count for u in updates})


def get_strategies() -> typing.Mapping[str, typing.Type[Strategy]]:
    from .registry import STRATEGIES
    return STRATEGIES


def make_strategy(name: str, arch: ModelArchitecture, cfg: DefenseConfig,
                  executor: typing.Optional[conc.Executor] = None) -> Strategy:
    try:
        strategy_class = get_strategies()[name]
    except KeyError:
        raise DefenseError(f"invalid defense {name} (supported defenses: {', '.join(get_strategies())})")
    return strategy_class.from_config(arch, cfg, executor)
