"""Norm clipping: shrink updates that move too far from the global model."""

import concurrent.futures as conc
import dataclasses
import logging
import typing

import numpy as np

from . import AggregationResult, DefenseConfig, DefenseError, Strategy
from ..federation import ClientUpdate, fedavg_aggregate
from ..nn import ModelArchitecture, ParameterSet

logger = logging.getLogger(__name__)


def norm_clip_update(global_prev: ParameterSet, update: ClientUpdate, M: float) -> ClientUpdate:
    if not M > 0:
        raise DefenseError(f"norm bound must be positive: {M}")
    if not update.params.same_shape(global_prev):
        raise DefenseError(f"client {update.client_id} sent parameters of mismatched shape")

    prev = global_prev.flatten(np.float64)
    delta = update.params.flatten(np.float64) - prev
    norm = float(np.linalg.norm(delta))
    if norm <= M:
        return update
    logger.debug("client %d: clipping update norm %.4f to %.4f", update.client_id, norm, M)
    clipped = ParameterSet.from_flat(update.params, prev + delta * (M / norm))
    return ClientUpdate(update.client_id, clipped, update.reported_example_count)


@dataclasses.dataclass
class NormClippingStrategy(Strategy):
    NAME: typing.ClassVar[str] = "NormClipping"
    norm_bound: float = 3.0

    @classmethod
    def from_config(cls, arch: ModelArchitecture, cfg: DefenseConfig,
                    executor: typing.Optional[conc.Executor] = None) -> 'Strategy':
        return cls(cfg.norm_bound)

    def aggregate(self, global_prev: ParameterSet, updates: typing.Sequence[ClientUpdate],
                  round_index: int) -> AggregationResult:
        clipped = [norm_clip_update(global_prev, u, self.norm_bound) for u in updates]
        n = sum(1 for a, b in zip(updates, clipped) if a is not b)
        logger.info("round %d: clipped %d of %d updates", round_index, n, len(updates))
        return AggregationResult(
            fedavg_aggregate(clipped),
            adjusted_counts={u.client_id: u.reported_example_count for u in clipped})
