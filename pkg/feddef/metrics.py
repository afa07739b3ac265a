"""Attack success rate, classification accuracy and result files."""

import csv
import dataclasses
import typing

import numpy as np

from .data import LabeledDataset, PoisonSpec, apply_trigger_batch
from .nn import ModelArchitecture, ParameterSet, predict_batch
from .util import FedDefError, dataclass_args, open_unlink_on_error


class MetricsError(FedDefError):
    pass


class ReportError(MetricsError):
    def __init__(self, path: str, problem: str) -> None:
        super().__init__(f"{path}: {problem}")
        self.path = path


@dataclasses.dataclass(frozen=True, eq=False, **dataclass_args)
class MethodResult:
    asr: float
    ca: float
    confidence: typing.Mapping[int, float] = dataclasses.field(default_factory=dict)
    adjusted_counts: typing.Mapping[int, int] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        for name, value in (('ASR', self.asr), ('CA', self.ca)):
            if not 0 <= value <= 100:
                raise MetricsError(f"{name} outside [0, 100]: {value}")


@dataclasses.dataclass(eq=False, **dataclass_args)
class RoundRecord:
    round_index: int
    results: typing.Dict[str, MethodResult]
    malicious_client: typing.Optional[int] = None
    wall_time: float = 0.0

    def merge(self, other: 'RoundRecord') -> 'RoundRecord':
        if other.round_index != self.round_index:
            raise MetricsError(f"cannot merge round {other.round_index} into round {self.round_index}")
        return RoundRecord(self.round_index, {**self.results, **other.results},
                           self.malicious_client, self.wall_time + other.wall_time)

    def renamed(self, old: str, new: str) -> 'RoundRecord':
        results = {new if k == old else k: v for k, v in self.results.items()}
        return dataclasses.replace(self, results=results)

    def summary(self) -> str:
        parts = [f"round {self.round_index}:"]
        for method, r in self.results.items():
            flagged = ", ".join(f"{c}={v:.2f}" for c, v in r.confidence.items()) or "none"
            parts.append(f"{method} ASR {r.asr:.2f} CA {r.ca:.2f} flagged [{flagged}]")
        if self.malicious_client is not None:
            parts.append(f"(malicious client {self.malicious_client})")
        return " ".join(parts)


def merge_records(*runs: typing.Sequence[RoundRecord]) -> typing.List[RoundRecord]:
    """Join several runs round by round."""
    merged: typing.Dict[int, RoundRecord] = {}
    for run in runs:
        for r in run:
            merged[r.round_index] = merged[r.round_index].merge(r) if r.round_index in merged else r
    return [merged[k] for k in sorted(merged)]


def _percent(hits: int, total: int) -> float:
    return 100.0 * hits / total


def attack_success_rate(arch: ModelArchitecture, params: ParameterSet, test_set: LabeledDataset,
                        spec: PoisonSpec, exclude_target_class: bool = False) -> float:
    images = test_set.images
    if exclude_target_class:
        images = images[test_set.labels != spec.target_label]
    if len(images) == 0:
        raise MetricsError("empty test set")
    predictions = predict_batch(arch, params, apply_trigger_batch(images, spec))
    return _percent(int(np.count_nonzero(predictions == spec.target_label)), len(images))


def classification_accuracy(arch: ModelArchitecture, params: ParameterSet, test_set: LabeledDataset) -> float:
    if len(test_set) == 0:
        raise MetricsError("empty test set")
    predictions = predict_batch(arch, params, test_set.images)
    return _percent(int(np.count_nonzero(predictions == test_set.labels)), len(test_set))


def _check_sorted(records: typing.Sequence[RoundRecord]) -> None:
    rounds = [r.round_index for r in records]
    if rounds != sorted(rounds):
        raise MetricsError(f"records are not sorted by round: {rounds}")


def _write_rows(path: str, header: typing.Sequence[str], rows: typing.Iterable[typing.Sequence[str]]) -> None:
    try:
        with open_unlink_on_error(path) as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise ReportError(path, e.strerror or str(e))


def _result(record: RoundRecord, method: str) -> MethodResult:
    try:
        return record.results[method]
    except KeyError:
        raise MetricsError(f"round {record.round_index} has no result for {method}")


def write_csv(records: typing.Sequence[RoundRecord], methods: typing.Sequence[str], path: str) -> None:
    _check_sorted(records)
    header = ['x']
    for m in methods:
        header += [f'y_{m}_ASR', f'y_{m}_CA']

    def rows() -> typing.Iterator[typing.List[str]]:
        for r in records:
            row = [str(r.round_index)]
            for m in methods:
                result = _result(r, m)
                row += [f'{result.asr:.2f}', f'{result.ca:.2f}']
            yield row

    _write_rows(path, header, list(rows()))


def write_benign_csv(records: typing.Sequence[RoundRecord], methods: typing.Sequence[str], path: str) -> None:
    _check_sorted(records)
    columns = sorted(methods)
    rows = [[f'{_result(r, m).ca:.2f}' for m in columns] + [str(r.round_index)] for r in records]
    _write_rows(path, columns + ['x'], rows)


def read_csv(path: str) -> typing.Tuple[typing.List[str], typing.List[RoundRecord]]:
    """Parse a file produced by ``write_csv``."""
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            table = list(csv.reader(f))
    except OSError as e:
        raise ReportError(path, e.strerror or str(e))
    if not table:
        raise ReportError(path, "empty file")

    header = table[0]
    if not header or header[0] != 'x' or len(header) % 2 != 1:
        raise ReportError(path, f"unexpected header {','.join(header)}")
    methods = []
    for asr, ca in zip(header[1::2], header[2::2]):
        if not (asr.startswith('y_') and asr.endswith('_ASR') and ca == asr[:-4] + '_CA'):
            raise ReportError(path, f"unexpected columns {asr},{ca}")
        methods.append(asr[2:-4])

    records = []
    for n, row in enumerate(table[1:], start=2):
        if len(row) != len(header):
            raise ReportError(path, f"line {n}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row[1:]]
            results = {m: MethodResult(values[2 * i], values[2 * i + 1]) for i, m in enumerate(methods)}
            records.append(RoundRecord(int(row[0]), results))
        except (ValueError, MetricsError) as e:
            raise ReportError(path, f"line {n}: {e}")
    return methods, records
