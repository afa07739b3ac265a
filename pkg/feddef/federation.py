"""Federated rounds: local training of every client, then aggregation
   of their models through a pluggable strategy."""

import concurrent.futures as conc
import dataclasses
import logging
import os
import time
import typing

import numpy as np

from .data import LabeledDataset, PoisonSpec
from .nn import ModelArchitecture, ParameterSet, TrainingError, TrainingHyperparams, train_local
from .util import FedDefError, dataclass_args, derive_seed

if typing.TYPE_CHECKING:
    from .defense import Strategy
    from .metrics import RoundRecord

logger = logging.getLogger(__name__)


class AggregationError(FedDefError):
    pass


class ClientError(FedDefError):
    def __init__(self, round_index: int, client_id: int, cause: FedDefError) -> None:
        super().__init__(f"round {round_index}, client {client_id}: {cause.message}")
        self.round_index = round_index
        self.client_id = client_id


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class ClientRecord:
    client_id: int
    data: LabeledDataset
    # ground truth for evaluation, never passed to a strategy
    is_malicious: bool = False


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class GlobalState:
    round_index: int
    global_params: ParameterSet
    arch: ModelArchitecture

    def advance(self, params: ParameterSet) -> 'GlobalState':
        return GlobalState(self.round_index + 1, params, self.arch)


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class ClientUpdate:
    client_id: int
    params: ParameterSet
    reported_example_count: int


def fedavg_aggregate(updates: typing.Sequence[ClientUpdate]) -> ParameterSet:
    """Weighted mean of the client models, each weighing n_k / n."""
    if not updates:
        raise AggregationError("no client updates to aggregate")
    total = sum(u.reported_example_count for u in updates)
    if total <= 0:
        raise AggregationError("every client has a zero example count")

    ordered = sorted(updates, key=lambda u: u.client_id)
    reference = ordered[0].params
    for u in ordered:
        if not u.params.same_shape(reference):
            raise AggregationError(f"client {u.client_id} sent parameters of mismatched shape")

    acc = [np.zeros(a.shape, dtype=np.float64) for a in reference.arrays()]
    for u in ordered:
        if u.reported_example_count == 0:
            continue
        # divide first, so that scaling every count leaves the weights unchanged
        weight = u.reported_example_count / total
        for a, p in zip(acc, u.params.arrays()):
            a += weight * p.astype(np.float64)
    return ParameterSet.from_arrays([a.astype(reference.dtype) for a in acc])


def default_executor(workers: typing.Optional[int] = None) -> conc.Executor:
    if workers is None:
        ncpus = os.cpu_count() or 1
        workers = max(2, ncpus) - 1
    return conc.ThreadPoolExecutor(max_workers=workers)


def train_clients(state: GlobalState, clients: typing.Sequence[ClientRecord],
                  hp: TrainingHyperparams, base_seed: int,
                  executor: typing.Optional[conc.Executor] = None) -> typing.List[ClientUpdate]:
    """Train every client from the current global model; the per-client
       seed depends only on (base_seed, round, client_id)."""
    t = state.round_index

    def train(client: ClientRecord) -> ClientUpdate:
        client_hp = hp.with_seed(derive_seed(base_seed, t, client.client_id))
        try:
            params = train_local(state.arch, state.global_params, client.data, client_hp)
        except TrainingError as e:
            raise ClientError(t, client.client_id, e)
        logger.debug("round %d: client %d trained on %d examples (announces %d)",
                     t, client.client_id, len(client.data), client.data.announced)
        return ClientUpdate(client.client_id, params, client.data.announced)

    ordered = sorted(clients, key=lambda c: c.client_id)
    if executor is None:
        return [train(c) for c in ordered]
    return list(executor.map(train, ordered))


def run_round(state: GlobalState, clients: typing.Sequence[ClientRecord], hp: TrainingHyperparams,
              strategy: 'Strategy', poison: typing.Optional[PoisonSpec], test_set: LabeledDataset,
              base_seed: int = 0, executor: typing.Optional[conc.Executor] = None,
              updates: typing.Optional[typing.Sequence[ClientUpdate]] = None,
              exclude_target_class: bool = False
              ) -> typing.Tuple[GlobalState, 'RoundRecord']:
    """Run round ``state.round_index`` and return the advanced state with
       the metrics of the new global model.  ASR is measured with ``poison``,
       or with the default trigger when no attack is running.  Precomputed
       ``updates`` skip local training."""
    from .metrics import MethodResult, RoundRecord, attack_success_rate, classification_accuracy

    if not clients:
        raise AggregationError("no clients in the federation")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise AggregationError(f"duplicate client ids {sorted(ids)}")

    start = time.monotonic()
    t = state.round_index
    if updates is None:
        updates = train_clients(state, clients, hp, base_seed, executor)
    try:
        result = strategy.aggregate(state.global_params, updates, t)
    except FedDefError as e:
        raise AggregationError(f"round {t}: {e.message}")

    trigger = poison or PoisonSpec()
    method = MethodResult(
        asr=attack_success_rate(state.arch, result.params, test_set, trigger, exclude_target_class),
        ca=classification_accuracy(state.arch, result.params, test_set),
        confidence=dict(result.confidence),
        adjusted_counts=dict(result.adjusted_counts))
    malicious = [c.client_id for c in clients if c.is_malicious]
    record = RoundRecord(
        round_index=t,
        results={strategy.NAME: method},
        malicious_client=malicious[0] if malicious else None,
        wall_time=time.monotonic() - start)
    return state.advance(result.params), record
