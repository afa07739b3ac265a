"""Desk-sized MNIST scenarios.  These take minutes each and are skipped
   unless FEDDEF_DATA_DIR points at the MNIST IDX files."""

import functools
import os
import pytest
import typing

from feddef.config import build_config
from feddef.experiments import cmd_benign, cmd_run, cmd_sweep_scale, eat
from feddef.metrics import RoundRecord


@pytest.fixture(scope="module")
def desk_dir() -> str:
    data_dir = os.environ.get('FEDDEF_DATA_DIR')
    if not data_dir:
        pytest.skip("FEDDEF_DATA_DIR not set")
    return data_dir


@functools.lru_cache(maxsize=None)
def desk_run(data_dir: str, command: str, output: str,
             **values: str) -> typing.Tuple[RoundRecord, ...]:
    config = build_config({"data_dir": data_dir, "output_csv": output, **values}, desk=True, environ={})
    if command == "benign":
        return tuple(cmd_benign(config, eat))
    if command == "sweep-scale":
        return tuple(cmd_sweep_scale(config, [1, 20], eat))
    return tuple(cmd_run(config, eat))


@pytest.fixture(scope="module")
def outdir(tmp_path_factory: typing.Any) -> str:
    return str(tmp_path_factory.mktemp("desk"))


class TestDesk:
    def test_attack(self, desk_dir: str, outdir: str) -> None:
        """Check that an undefended federation learns the backdoor."""
        records = desk_run(desk_dir, "run", os.path.join(outdir, "none.csv"), defense="none")
        assert len(records) == 6
        assert records[-1].results["FedAvg"].asr >= 90

    def test_defense(self, desk_dir: str, outdir: str) -> None:
        """Check that FedDefender keeps the backdoor out from round 2 on
           without hurting accuracy."""
        records = desk_run(desk_dir, "run", os.path.join(outdir, "fd.csv"), defense="feddefender")
        for r in records[1:]:
            assert r.results["FedDefender"].asr <= 20, r.summary()
        benign = desk_run(desk_dir, "run", os.path.join(outdir, "benign_fedavg.csv"),
                          defense="none", attack="off")
        assert abs(records[-1].results["FedDefender"].ca - benign[-1].results["FedAvg"].ca) <= 5

    def test_scale(self, desk_dir: str, outdir: str) -> None:
        records = desk_run(desk_dir, "sweep-scale", os.path.join(outdir, "scale.csv"), defense="none")
        assert records[-1].results["1X"].asr <= 20
        assert records[-1].results["20X"].asr >= 90

    def test_benign(self, desk_dir: str, outdir: str) -> None:
        """Check that FedDefender costs no accuracy when nobody attacks."""
        records = desk_run(desk_dir, "benign", os.path.join(outdir, "benign.csv"))
        for r in records:
            assert abs(r.results["FedDefender"].ca - r.results["FedAvg"].ca) <= 2, r.summary()

    def test_deterministic(self, desk_dir: str, outdir: str) -> None:
        paths = [os.path.join(outdir, f"again{i}.csv") for i in (1, 2)]
        for path in paths:
            desk_run(desk_dir, "run", path, rounds="2")
        contents = []
        for path in paths:
            with open(path, "rb") as f:
                contents.append(f.read())
        assert contents[0] == contents[1]
