"""Scenario configuration: ``key = value`` files, command-line overrides
   and validation."""

import compynator.core         # type: ignore
import dataclasses
import logging
import os
import typing

from .data import PoisonSpec
from .defense import DefenseConfig
from .defense.registry import STRATEGIES
from .nn import TrainingHyperparams
from .nn.profiles import PROFILES
from .util import FedDefError, dataclass_args

logger = logging.getLogger(__name__)

DATA_DIR_ENV = 'FEDDEF_DATA_DIR'
DATASETS = ('mnist', 'fashionmnist', 'synthetic')
IMAGE_SIZE = 28
NUM_CLASSES = 10


class ConfigError(FedDefError):
    def __init__(self, problems: typing.Sequence[str]) -> None:
        super().__init__("invalid configuration: " + "; ".join(problems))
        self.problems = list(problems)


def _bool(s: str) -> bool:
    s = s.lower()
    if s in ('1', 'true', 'yes', 'on'):
        return True
    if s in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {s}")


def _optional_int(s: str) -> typing.Optional[int]:
    return None if s.lower() in ('', 'none', 'all') else int(s)


def _ints(s: str) -> typing.Tuple[int, ...]:
    return tuple(int(x) for x in s.split(',') if x.strip())


def _floats(s: str) -> typing.Tuple[float, ...]:
    return tuple(float(x) for x in s.split(',') if x.strip())


def _opt(default: typing.Any, parse: typing.Callable[[str], typing.Any], help: str) -> typing.Any:
    return dataclasses.field(default=default, metadata={'parse': parse, 'help': help})


@dataclasses.dataclass(frozen=True, **dataclass_args)
class ScenarioConfig:
    dataset: str = _opt('mnist', str, "mnist, fashionmnist or synthetic")
    data_dir: str = _opt('data', str, "directory holding the IDX files")
    clients: int = _opt(20, int, "number of clients K")
    rounds: int = _opt(14, int, "number of federated rounds")
    epochs: int = _opt(5, int, "local epochs per round")
    learning_rate: float = _opt(0.001, float, "SGD step size")
    batch_size: int = _opt(32, int, "minibatch size")
    momentum: float = _opt(0.0, float, "SGD momentum, 0 for plain SGD")
    defense: str = _opt('feddefender', str, "none, normclip or feddefender")
    theta: float = _opt(0.5, float, "malicious confidence threshold")
    probe_count: int = _opt(100, int, "random probes per round")
    activation_threshold: float = _opt(0.0, float, "a neuron is active above this value")
    probe_seed: int = _opt(0, int, "seed of the probe generator")
    discard_above_theta: bool = _opt(True, _bool, "drop clients above theta instead of penalizing them")
    norm_bound: float = _opt(3.0, float, "NormClipping bound M")
    attack: str = _opt('on', str, "on or off")
    scale_factor: int = _opt(20, int, "attack scale X")
    poison_fraction: float = _opt(1.0, float, "fraction of the attacker's examples that carry the trigger")
    replicate_data: bool = _opt(False, _bool, "attacker also replicates its examples X times")
    trigger_size: int = _opt(4, int, "side of the square trigger")
    trigger_row: int = _opt(0, int, "trigger origin row")
    trigger_col: int = _opt(0, int, "trigger origin column")
    trigger_value: float = _opt(1.0, float, "trigger pixel intensity")
    target_label: int = _opt(0, int, "label the backdoor flips to")
    malicious_client: int = _opt(0, int, "id of the attacking client")
    rotate_malicious: bool = _opt(False, _bool, "client (t-1) mod K attacks in round t")
    exclude_target_class: bool = _opt(False, _bool, "leave target-class images out of ASR")
    base_seed: int = _opt(0, int, "seed of initialization, partitioning and training")
    arch_profile: str = _opt('paper_cnn', str, "paper_cnn or fast_mlp")
    train_examples: typing.Optional[int] = _opt(None, _optional_int, "use only the first N training examples")
    test_examples: typing.Optional[int] = _opt(None, _optional_int, "use only the first N test examples")
    synthetic_examples: int = _opt(2400, int, "size of the synthetic dataset")
    workers: typing.Optional[int] = _opt(None, _optional_int, "training threads, 0 for none")
    scales: typing.Tuple[int, ...] = _opt((1, 3, 5, 10, 20), _ints, "scale factors for sweep-scale")
    thetas: typing.Tuple[float, ...] = _opt((0.25, 0.5, 0.75, 1.0), _floats, "thresholds for sweep-theta")
    output_csv: str = _opt('results.csv', str, "result file")

    # keys that were given by a preset, a file or a flag rather than defaulted
    explicit: typing.FrozenSet[str] = dataclasses.field(default=frozenset(), compare=False)

    @classmethod
    def keys(cls) -> typing.List[str]:
        return [f.name for f in dataclasses.fields(cls) if 'parse' in f.metadata]

    @classmethod
    def field_help(cls, key: str) -> str:
        return typing.cast(str, _FIELDS[key].metadata['help'])

    def is_set(self, key: str) -> bool:
        return key in self.explicit

    def override(self, **changes: typing.Any) -> 'ScenarioConfig':
        return dataclasses.replace(self, explicit=self.explicit.union(changes), **changes)

    def problems(self, defenses: typing.Optional[typing.Collection[str]] = None) -> typing.List[str]:
        """Return every invalid field.  ``defenses`` are the strategies the
           command will run, by default just ``defense``."""
        p = []

        def need(ok: bool, key: str, what: str) -> None:
            if not ok:
                p.append(f"{key}: {what}, got {getattr(self, key)!r}")

        need(self.dataset in DATASETS, 'dataset', f"must be one of {', '.join(DATASETS)}")
        need(self.clients >= 1, 'clients', "must be at least 1")
        if 'feddefender' in (defenses or (self.defense,)):
            need(self.clients >= 2, 'clients', "feddefender needs at least 2 clients")
        need(self.rounds >= 1, 'rounds', "must be at least 1")
        need(self.epochs >= 1, 'epochs', "must be at least 1")
        need(self.learning_rate > 0, 'learning_rate', "must be positive")
        need(self.batch_size >= 1, 'batch_size', "must be at least 1")
        need(0 <= self.momentum < 1, 'momentum', "must be in [0, 1)")
        need(self.defense in STRATEGIES, 'defense', f"must be one of {', '.join(STRATEGIES)}")
        need(0 <= self.theta <= 1, 'theta', "must be in [0, 1]")
        need(self.probe_count >= 1, 'probe_count', "must be at least 1")
        need(self.probe_seed >= 0, 'probe_seed', "must not be negative")
        need(self.norm_bound > 0, 'norm_bound', "must be positive")
        need(self.attack in ('on', 'off'), 'attack', "must be on or off")
        need(self.scale_factor >= 1, 'scale_factor', "must be at least 1")
        need(0 < self.poison_fraction <= 1, 'poison_fraction', "must be in (0, 1]")
        need(self.trigger_size >= 1, 'trigger_size', "must be at least 1")
        need(0 <= self.trigger_row <= IMAGE_SIZE - self.trigger_size, 'trigger_row',
             f"trigger must fit a {IMAGE_SIZE}x{IMAGE_SIZE} image")
        need(0 <= self.trigger_col <= IMAGE_SIZE - self.trigger_size, 'trigger_col',
             f"trigger must fit a {IMAGE_SIZE}x{IMAGE_SIZE} image")
        need(0 <= self.trigger_value <= 1, 'trigger_value', "must be in [0, 1]")
        need(0 <= self.target_label < NUM_CLASSES, 'target_label', f"must be in [0, {NUM_CLASSES})")
        need(0 <= self.malicious_client < max(self.clients, 1), 'malicious_client', "must be a client id")
        need(self.base_seed >= 0, 'base_seed', "must not be negative")
        need(self.arch_profile in PROFILES, 'arch_profile', f"must be one of {', '.join(PROFILES)}")
        need(self.train_examples is None or self.train_examples >= self.clients, 'train_examples',
             "must leave at least one example per client")
        need(self.test_examples is None or self.test_examples >= 1, 'test_examples', "must be at least 1")
        need(self.synthetic_examples >= self.clients, 'synthetic_examples',
             "must leave at least one example per client")
        need(self.workers is None or self.workers >= 0, 'workers', "must not be negative")
        need(bool(self.scales) and all(x >= 1 for x in self.scales), 'scales', "must be at least 1")
        need(bool(self.thetas) and all(0 <= x <= 1 for x in self.thetas), 'thetas', "must be in [0, 1]")
        need(bool(self.output_csv), 'output_csv', "must not be empty")
        return p

    def check(self, defenses: typing.Optional[typing.Collection[str]] = None) -> 'ScenarioConfig':
        problems = self.problems(defenses)
        if problems:
            raise ConfigError(problems)
        return self

    def hyperparams(self) -> TrainingHyperparams:
        return TrainingHyperparams(self.learning_rate, self.epochs, self.batch_size,
                                   self.base_seed, self.momentum)

    def poison_spec(self) -> PoisonSpec:
        return PoisonSpec(trigger_size=self.trigger_size,
                          trigger_origin=(self.trigger_row, self.trigger_col),
                          trigger_value=self.trigger_value,
                          target_label=self.target_label,
                          scale_factor=self.scale_factor,
                          poison_fraction=self.poison_fraction,
                          replicate_data=self.replicate_data)

    def defense_config(self) -> DefenseConfig:
        return DefenseConfig(theta=self.theta, probe_count=self.probe_count,
                             activation_threshold=self.activation_threshold,
                             probe_seed=self.probe_seed, norm_bound=self.norm_bound,
                             discard_above_theta=self.discard_above_theta)


_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}

# sized so that a full scenario runs on a laptop CPU in minutes
DESK_PRESET: typing.Mapping[str, str] = {
    'clients': '10',
    'train_examples': '2000',
    'test_examples': '2000',
    'arch_profile': 'paper_cnn',
    'rounds': '6',
    'epochs': '2',
    'learning_rate': '0.05',
}


Parser = typing.Callable[[str], typing.Union[compynator.core.Success, compynator.core.Failure]]


@typing.no_type_check
def _line_parser() -> Parser:
    from compynator.core import One, Terminal

    Spaces = One.where(str.isspace).repeat(lower=0, reducer=lambda x, y: None)
    Key = One.where(lambda c: c.isalnum() or c == '_').repeat(lower=1)
    Value = One.where(lambda c: True).repeat(lower=1)
    Equals = Spaces.then(Terminal('=')).skip(Spaces)
    return Spaces.then(Key).skip(Equals).then(Value, reducer=lambda k, v: (k, v.strip()))


Line = _line_parser()


def parse_line(line: str) -> typing.Tuple[str, str]:
    results = Line(line)
    if not isinstance(results, compynator.core.Success):
        raise ValueError(f"expected 'key = value' at '{line.strip()}'")
    remain = line
    for result in results:
        if not result.remain:
            return typing.cast(typing.Tuple[str, str], result.value)
        remain = min(remain, result.remain, key=len)
    raise ValueError(f"unexpected text at '{remain}'")


def parse_config_text(text: str, filename: str = '<string>') -> typing.Dict[str, str]:
    """Return the raw ``key = value`` pairs of a scenario file.  Later
       lines win."""
    values: typing.Dict[str, str] = {}
    problems = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0]
        if not line.strip():
            continue
        try:
            key, value = parse_line(line)
        except ValueError as e:
            problems.append(f"{filename}:{n}: {e}")
            continue
        values[key] = value
    if problems:
        raise ConfigError(problems)
    return values


def read_config_file(path: str) -> typing.Dict[str, str]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return parse_config_text(f.read(), path)
    except OSError as e:
        raise ConfigError([f"{path}: {e.strerror or e}"])


def build_config(*layers: typing.Mapping[str, str], desk: bool = False,
                 environ: typing.Optional[typing.Mapping[str, str]] = None) -> ScenarioConfig:
    """Apply the desk preset, the ``FEDDEF_DATA_DIR`` environment variable
       and then each layer of raw values in order, and validate the result."""
    if environ is None:
        environ = os.environ
    merged: typing.Dict[str, str] = {}
    if desk:
        merged.update(DESK_PRESET)
    if environ.get(DATA_DIR_ENV):
        merged['data_dir'] = environ[DATA_DIR_ENV]
    for layer in layers:
        merged.update(layer)

    problems = []
    changes: typing.Dict[str, typing.Any] = {}
    for key, raw in merged.items():
        if key not in _FIELDS or key == 'explicit':
            problems.append(f"{key}: unknown key")
            continue
        try:
            changes[key] = _FIELDS[key].metadata['parse'](raw)
        except ValueError as e:
            problems.append(f"{key}: cannot parse {raw!r} ({e})")
    if problems:
        raise ConfigError(problems)

    config = ScenarioConfig().override(**changes).check()
    logger.debug("scenario: %s", ", ".join(f"{k}={getattr(config, k)}" for k in sorted(config.explicit)))
    return config
