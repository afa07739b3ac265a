"""Experiment drivers: scenario wiring and the run/compare/sweep/benign
   experiments, each producing a CSV."""

import concurrent.futures as conc
import contextlib
import dataclasses
import logging
import os
import typing

from .config import NUM_CLASSES, ScenarioConfig
from .data import LabeledDataset, PoisonSpec, make_synthetic, partition_random, poison_client
from .data.idx import load_dataset
from .defense import Strategy, make_strategy
from .defense.registry import METHOD_NAMES
from .federation import ClientRecord, ClientUpdate, GlobalState, default_executor, run_round, train_clients
from .metrics import RoundRecord, merge_records, write_benign_csv, write_csv
from .nn import ModelArchitecture, init_params
from .nn.profiles import get_profile
from .util import dataclass_args, derive_seed

logger = logging.getLogger(__name__)

# independent random streams derived from base_seed
TRAIN_STREAM = 1001
TEST_STREAM = 1002
PARTITION_STREAM = 1003
INIT_STREAM = 1004

COMPARED = ('none', 'normclip', 'feddefender')
THETA_EPOCHS = 15

Progress = typing.Callable[[str], None]


def eat(*args: typing.Any) -> None:
    pass


@dataclasses.dataclass(eq=False, **dataclass_args)
class Scenario:
    config: ScenarioConfig
    arch: ModelArchitecture
    test: LabeledDataset
    partitions: typing.List[LabeledDataset]
    poisoned: typing.Dict[typing.Tuple[int, PoisonSpec], LabeledDataset] = dataclasses.field(default_factory=dict)

    def reconfigure(self, config: ScenarioConfig) -> 'Scenario':
        """Reuse the datasets and partitions with different training,
           attack or defense settings."""
        for key in ('dataset', 'data_dir', 'clients', 'base_seed', 'arch_profile',
                    'train_examples', 'test_examples', 'synthetic_examples'):
            assert getattr(config, key) == getattr(self.config, key), key
        return Scenario(config, self.arch, self.test, self.partitions, self.poisoned)

    def malicious_client(self, round_index: int) -> typing.Optional[int]:
        cfg = self.config
        if cfg.attack == 'off':
            return None
        if cfg.rotate_malicious:
            return (round_index - 1) % cfg.clients
        return cfg.malicious_client

    def clients(self, round_index: int) -> typing.List[ClientRecord]:
        m = self.malicious_client(round_index)
        spec = self.config.poison_spec()
        result = []
        for k, data in enumerate(self.partitions):
            if k == m:
                if (k, spec) not in self.poisoned:
                    self.poisoned[k, spec] = poison_client(data, spec)
                data = self.poisoned[k, spec]
            result.append(ClientRecord(k, data, is_malicious=k == m))
        return result

    def initial_state(self) -> GlobalState:
        return GlobalState(1, init_params(self.arch, derive_seed(self.config.base_seed, INIT_STREAM)), self.arch)


def load_scenario(config: ScenarioConfig) -> Scenario:
    if config.dataset == 'synthetic':
        n = config.synthetic_examples
        train = make_synthetic(n, seed=derive_seed(config.base_seed, TRAIN_STREAM))
        test = make_synthetic(max(1, n // 4), seed=derive_seed(config.base_seed, TEST_STREAM))
    else:
        train = load_dataset(config.dataset, config.data_dir, 'train')
        test = load_dataset(config.dataset, config.data_dir, 'test')
    if config.train_examples is not None:
        train = train.take(config.train_examples)
    if config.test_examples is not None:
        test = test.take(config.test_examples)

    arch = get_profile(config.arch_profile)(train.image_shape, NUM_CLASSES)
    partitions = partition_random(train, config.clients, derive_seed(config.base_seed, PARTITION_STREAM))
    logger.info("%s: %d training examples over %d clients, %d test examples",
                config.dataset, len(train), config.clients, len(test))
    return Scenario(config, arch, test, partitions)


@contextlib.contextmanager
def scenario_executor(config: ScenarioConfig) -> typing.Iterator[typing.Optional[conc.Executor]]:
    if config.workers == 0:
        yield None
        return
    with default_executor(config.workers) as executor:
        yield executor


def simulate(scenario: Scenario, defenses: typing.Sequence[str],
             executor: typing.Optional[conc.Executor] = None,
             progress: Progress = eat) -> typing.List[RoundRecord]:
    """Run every round of ``scenario`` once per defense.  All defenses start
       from the same model and see the same clients; updates are shared
       whenever two defenses hold the same global model."""
    cfg = scenario.config
    hp = cfg.hyperparams()
    poison = cfg.poison_spec()
    strategies: typing.Dict[str, Strategy] = {
        d: make_strategy(d, scenario.arch, cfg.defense_config(), executor) for d in defenses}
    initial = scenario.initial_state()
    states = {d: initial for d in defenses}

    records = []
    for t in range(1, cfg.rounds + 1):
        clients = scenario.clients(t)
        trained: typing.List[typing.Tuple[GlobalState, typing.List[ClientUpdate]]] = []
        merged: typing.Optional[RoundRecord] = None
        for d in defenses:
            state = states[d]
            updates = next((u for s, u in trained if s.global_params.equals(state.global_params)), None)
            if updates is None:
                updates = train_clients(state, clients, hp, cfg.base_seed, executor)
                trained.append((state, updates))
            states[d], record = run_round(state, clients, hp, strategies[d], poison, scenario.test,
                                          cfg.base_seed, executor, updates, cfg.exclude_target_class)
            merged = record if merged is None else merged.merge(record)
        assert merged is not None
        progress(merged.summary())
        records.append(merged)
    return records


def _suffixed(path: str, suffix: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_{suffix}{ext or '.csv'}"


def cmd_run(config: ScenarioConfig, progress: Progress = print) -> typing.List[RoundRecord]:
    scenario = load_scenario(config)
    with scenario_executor(config) as executor:
        records = simulate(scenario, [config.defense], executor, progress)
    write_csv(records, [METHOD_NAMES[config.defense]], config.output_csv)
    return records


def cmd_compare(config: ScenarioConfig, progress: Progress = print) -> typing.List[RoundRecord]:
    config.check(COMPARED)
    scenario = load_scenario(config)
    with scenario_executor(config) as executor:
        records = simulate(scenario, COMPARED, executor, progress)
    write_csv(records, [METHOD_NAMES[d] for d in COMPARED], config.output_csv)
    return records


def cmd_sweep_scale(config: ScenarioConfig, scales: typing.Optional[typing.Sequence[int]] = None,
                    progress: Progress = print) -> typing.List[RoundRecord]:
    """Run the scenario once per attack scale; write one CSV per scale and
       all scales merged into ``output_csv``."""
    scales = scales or config.scales
    if config.attack == 'off':
        logger.warning("sweeping the attack scale with the attack turned off")
    scenario = load_scenario(config)
    method = METHOD_NAMES[config.defense]
    runs = []
    with scenario_executor(config) as executor:
        for x in scales:
            progress(f"attack scale {x}X")
            cfg = config.override(scale_factor=x)
            records = simulate(scenario.reconfigure(cfg), [config.defense], executor, progress)
            records = [r.renamed(method, f"{x}X") for r in records]
            write_csv(records, [f"{x}X"], _suffixed(config.output_csv, f"{x}X"))
            runs.append(records)
    merged = merge_records(*runs)
    write_csv(merged, [f"{x}X" for x in scales], config.output_csv)
    return merged


def theta_name(theta: float) -> str:
    return f"theta{theta:g}"


def cmd_sweep_theta(config: ScenarioConfig, thetas: typing.Optional[typing.Sequence[float]] = None,
                    progress: Progress = print) -> typing.List[RoundRecord]:
    """Run FedDefender once per confidence threshold; one column pair per
       threshold."""
    thetas = thetas or config.thetas
    if not config.is_set('epochs'):
        config = config.override(epochs=THETA_EPOCHS)
    config = config.override(defense='feddefender', thetas=tuple(thetas)).check()
    scenario = load_scenario(config)
    method = METHOD_NAMES['feddefender']
    runs = []
    with scenario_executor(config) as executor:
        for theta in thetas:
            progress(f"theta {theta:g}")
            records = simulate(scenario.reconfigure(config.override(theta=theta)),
                               ['feddefender'], executor, progress)
            runs.append([r.renamed(method, theta_name(theta)) for r in records])
    merged = merge_records(*runs)
    write_csv(merged, [theta_name(theta) for theta in thetas], config.output_csv)
    return merged


def cmd_benign(config: ScenarioConfig, progress: Progress = print) -> typing.List[RoundRecord]:
    if config.attack == 'on':
        logger.info("benign run: turning the attack off")
        config = config.override(attack='off')
    config.check(COMPARED)
    scenario = load_scenario(config)
    with scenario_executor(config) as executor:
        records = simulate(scenario, COMPARED, executor, progress)
    write_benign_csv(records, [METHOD_NAMES[d] for d in COMPARED], config.output_csv)
    return records
