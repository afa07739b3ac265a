"""Differential testing of client models on random probes, and the
   contribution restriction that builds on it.

Every client model runs on the same randomly generated input.  The set of
hidden neurons whose activation exceeds a threshold is the model's
fingerprint for that input; the client whose fingerprint is least similar
to everybody else's is the suspect.  Over many probes this yields, for
each client, the fraction of probes on which it was the suspect: its
malicious confidence.  Clients above the confidence threshold theta do not
contribute to the global model at all; the other flagged clients have
their example count cut to a fraction of the smallest count in the round.
"""

import collections
import concurrent.futures as conc
import dataclasses
import fractions
import logging
import typing

import numpy as np
import numpy.typing as npt

from . import AggregationResult, DefenseConfig, DefenseError, Strategy
from ..federation import ClientUpdate, fedavg_aggregate
from ..nn import ModelArchitecture, ParameterSet, ShapeError, forward_batch
from ..nn.layers import FloatArray, Shape
from ..util import dataclass_args, derive_seed

logger = logging.getLogger(__name__)

BitMatrix = npt.NDArray[np.bool_]
MaliciousConfidenceMap = typing.Dict[int, float]

# score gap below which two clients are compared exactly
TIE_TOLERANCE = 1e-9


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class ActivationFingerprint:
    bits: BitMatrix

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ActivationFingerprint) and np.array_equal(self.bits, other.bits)


def generate_probes(shape: Shape, count: int, seed: int) -> FloatArray:
    if count < 1:
        raise DefenseError(f"probe count must be at least 1: {count}")
    rng = np.random.default_rng(seed)
    return rng.random((count, *shape), dtype=np.float32)


def fingerprints(arch: ModelArchitecture, params: ParameterSet, probes: FloatArray,
                 activation_threshold: float, batch_size: int = 256) -> BitMatrix:
    """Return one row of neuron bits per probe."""
    rows = []
    for start in range(0, len(probes), batch_size):
        _, traces = forward_batch(arch, params, probes[start:start + batch_size])
        values = np.concatenate([t.reshape(len(t), -1) for t in traces], axis=1)
        rows.append(values > activation_threshold)
    return np.concatenate(rows, axis=0)


def fingerprint(arch: ModelArchitecture, params: ParameterSet, probe: FloatArray,
                activation_threshold: float = 0.0) -> ActivationFingerprint:
    if probe.shape != arch.input_shape:
        raise ShapeError(f"probe shape {probe.shape} does not match architecture input {arch.input_shape}")
    return ActivationFingerprint(fingerprints(arch, params, probe[None], activation_threshold)[0])


def jaccard_counts(bits: BitMatrix) -> typing.Tuple[npt.NDArray[np.int64], npt.NDArray[np.int64]]:
    """Intersection and union sizes of every pair of rows."""
    b = bits.astype(np.int64)
    inter = b @ b.T
    sizes = np.diag(inter)
    union = sizes[:, None] + sizes[None, :] - inter
    return inter, union


def _mean_jaccard(inter: npt.NDArray[np.int64], union: npt.NDArray[np.int64]) -> npt.NDArray[np.float64]:
    k = len(inter)
    sim = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    off = sim[~np.eye(k, dtype=bool)].reshape(k, k - 1)
    # sorting first makes clients with equal rows get bitwise equal scores
    return typing.cast(npt.NDArray[np.float64], np.sort(off, axis=1).sum(axis=1) / (k - 1))


def similarity_scores(bits: BitMatrix) -> npt.NDArray[np.float64]:
    """Mean Jaccard index of each row against every other row.  Two empty
       rows count as identical."""
    return _mean_jaccard(*jaccard_counts(bits))


def least_similar(inter: npt.NDArray[np.int64], union: npt.NDArray[np.int64]) -> typing.Optional[int]:
    """Index of the row with the lowest mean Jaccard index, or None if
       several rows share it.  Near ties are settled with exact fractions."""
    scores = _mean_jaccard(inter, union)
    near = np.flatnonzero(scores <= scores.min() + TIE_TOLERANCE)
    if len(near) == 1:
        return int(near[0])

    def exact(i: int) -> fractions.Fraction:
        return sum((fractions.Fraction(int(inter[i, j]), int(union[i, j])) if union[i, j] else fractions.Fraction(1)
                    for j in range(len(inter)) if j != i), fractions.Fraction(0))

    totals = {int(i): exact(int(i)) for i in near}
    best = min(totals.values())
    lowest = [i for i, total in totals.items() if total == best]
    return lowest[0] if len(lowest) == 1 else None


def _suspect(ids: typing.Sequence[int], bits: BitMatrix) -> typing.Optional[int]:
    index = least_similar(*jaccard_counts(bits))
    return None if index is None else ids[index]


def locate_suspect(client_params: typing.Mapping[int, ParameterSet], arch: ModelArchitecture,
                   probe: FloatArray, activation_threshold: float = 0.0) -> typing.Optional[int]:
    """Return the client whose fingerprint deviates most from the others,
       or None if several clients are equally deviant."""
    if len(client_params) < 2:
        raise DefenseError(f"differential testing needs at least 2 clients, got {len(client_params)}")
    ids = sorted(client_params)
    bits = np.stack([fingerprint(arch, client_params[c], probe, activation_threshold).bits for c in ids])
    return _suspect(ids, bits)


def restrict_contributions(N: typing.Mapping[int, int], confidence: typing.Mapping[int, float],
                           theta: float, min_n_k: typing.Optional[int] = None,
                           discard: bool = True) -> typing.Dict[int, int]:
    """Return the example counts to aggregate with.  Only flagged clients
       are touched."""
    if min_n_k is None:
        min_n_k = min(N.values())
    adjusted = dict(N)
    for client, c in confidence.items():
        if discard and c > theta:
            adjusted[client] = 0
        else:
            adjusted[client] = int(min_n_k * (1 - c))
    return adjusted


def fed_defender_aggregate(client2weights: typing.Mapping[int, ParameterSet], N: typing.Mapping[int, int],
                           probes: FloatArray, cfg: DefenseConfig, arch: ModelArchitecture,
                           executor: typing.Optional[conc.Executor] = None
                           ) -> typing.Tuple[ParameterSet, MaliciousConfidenceMap, typing.Dict[int, int]]:
    ids = sorted(client2weights)
    if sorted(N) != ids:
        raise DefenseError(f"example counts given for {sorted(N)}, models for {ids}")
    if len(probes) != cfg.probe_count:
        raise DefenseError(f"{len(probes)} probes, expected {cfg.probe_count}")
    if any(N[c] <= 0 for c in ids):
        raise DefenseError("example counts must be positive")
    if len(ids) < 2:
        raise DefenseError(f"differential testing needs at least 2 clients, got {len(ids)}")

    min_n_k = min(N.values())

    def run(client: int) -> BitMatrix:
        return fingerprints(arch, client2weights[client], probes, cfg.activation_threshold)

    bits = np.stack(list(executor.map(run, ids)) if executor else [run(c) for c in ids])

    raw: typing.Counter[int] = collections.Counter()
    for p in range(len(probes)):
        suspect = _suspect(ids, bits[:, p, :])
        if suspect is not None:
            raw[suspect] += 1

    confidence = {c: raw[c] / len(probes) for c in sorted(raw)}
    adjusted = restrict_contributions(N, confidence, cfg.theta, min_n_k, cfg.discard_above_theta)
    if not any(adjusted.values()):
        raise DefenseError("every client discarded")

    params = fedavg_aggregate([ClientUpdate(c, client2weights[c], adjusted[c]) for c in ids])
    return params, confidence, adjusted


class FedDefenderStrategy(Strategy):
    NAME = "FedDefender"

    def __init__(self, arch: ModelArchitecture, cfg: DefenseConfig,
                 executor: typing.Optional[conc.Executor] = None) -> None:
        self.arch = arch
        self.cfg = cfg
        self.executor = executor

    @classmethod
    def from_config(cls, arch: ModelArchitecture, cfg: DefenseConfig,
                    executor: typing.Optional[conc.Executor] = None) -> 'Strategy':
        return cls(arch, cfg, executor)

    def probes(self, round_index: int) -> FloatArray:
        return generate_probes(self.arch.input_shape, self.cfg.probe_count,
                               derive_seed(self.cfg.probe_seed, round_index))

    def aggregate(self, global_prev: ParameterSet, updates: typing.Sequence[ClientUpdate],
                  round_index: int) -> AggregationResult:
        params, confidence, adjusted = fed_defender_aggregate(
            {u.client_id: u.params for u in updates},
            {u.client_id: u.reported_example_count for u in updates},
            self.probes(round_index), self.cfg, self.arch, self.executor)
        for client, c in confidence.items():
            logger.info("round %d: client %d malicious confidence %.2f, count %d -> %d",
                        round_index, client, c,
                        next(u.reported_example_count for u in updates if u.client_id == client),
                        adjusted[client])
        return AggregationResult(params, confidence, adjusted)

