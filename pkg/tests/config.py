import pytest
import typing

from feddef.config import (
    DESK_PRESET, ConfigError, ScenarioConfig,
    build_config, parse_config_text, parse_line, read_config_file
)


class TestParser:
    def test_line(self) -> None:
        assert parse_line("clients = 10") == ("clients", "10")
        assert parse_line("  learning_rate=0.05  ") == ("learning_rate", "0.05")
        assert parse_line("scales = 1, 3, 5") == ("scales", "1, 3, 5")
        assert parse_line("data_dir = /tmp/my data") == ("data_dir", "/tmp/my data")

    def test_bad_line(self) -> None:
        with pytest.raises(ValueError):
            parse_line("clients 10")
        with pytest.raises(ValueError):
            parse_line("= 10")
        with pytest.raises(ValueError):
            parse_line("clients =")

    def test_text(self) -> None:
        """Check comments, blank lines and repeated keys."""
        text = """
# desk-sized scenario
clients = 10

rounds = 3   # short run
rounds = 4
"""
        assert parse_config_text(text) == {"clients": "10", "rounds": "4"}

    def test_problems_have_line_numbers(self) -> None:
        with pytest.raises(ConfigError) as e:
            parse_config_text("clients = 10\nbogus\nrounds\n", "scenario.cfg")
        assert len(e.value.problems) == 2
        assert e.value.problems[0].startswith("scenario.cfg:2:")
        assert e.value.problems[1].startswith("scenario.cfg:3:")

    def test_file(self, tmp_path: typing.Any) -> None:
        path = tmp_path / "s.cfg"
        path.write_text("theta = 0.25\n")
        assert read_config_file(str(path)) == {"theta": "0.25"}
        with pytest.raises(ConfigError):
            read_config_file(str(tmp_path / "missing.cfg"))


class TestBuild:
    def test_defaults(self) -> None:
        config = build_config(environ={})
        assert config == ScenarioConfig()
        assert config.rounds == 14 and config.epochs == 5 and config.theta == 0.5
        assert config.explicit == frozenset()

    def test_types(self) -> None:
        config = build_config({"clients": "30", "theta": "0.75", "rotate_malicious": "yes",
                               "test_examples": "none", "scales": "1,20"}, environ={})
        assert config.clients == 30
        assert config.theta == 0.75
        assert config.rotate_malicious is True
        assert config.test_examples is None
        assert config.scales == (1, 20)
        assert config.is_set("theta") and not config.is_set("rounds")

    def test_layers(self) -> None:
        """Check the precedence of preset, environment, file and flags."""
        config = build_config({"rounds": "3", "data_dir": "file"}, {"rounds": "2"}, desk=True,
                              environ={"FEDDEF_DATA_DIR": "/env"})
        assert config.rounds == 2
        assert config.data_dir == "file"
        assert config.clients == int(DESK_PRESET["clients"])
        assert config.train_examples == 2000
        assert build_config(desk=True, environ={"FEDDEF_DATA_DIR": "/env"}).data_dir == "/env"

    def test_total_validation(self) -> None:
        """Check that every invalid field is reported at once."""
        with pytest.raises(ConfigError) as e:
            build_config({"theta": "1.5", "clients": "0", "defense": "krum", "trigger_row": "26"}, environ={})
        fields = sorted({p.split(":")[0] for p in e.value.problems})
        assert fields == ["clients", "defense", "theta", "trigger_row"]

    def test_parse_errors(self) -> None:
        with pytest.raises(ConfigError) as e:
            build_config({"clients": "ten", "attack_strength": "3", "replicate_data": "maybe"}, environ={})
        assert len(e.value.problems) == 3
        assert "clients" in e.value.message

    def test_feddefender_needs_two_clients(self) -> None:
        with pytest.raises(ConfigError):
            build_config({"clients": "1", "malicious_client": "0"}, environ={})
        assert build_config({"clients": "1", "defense": "none"}, environ={}).clients == 1

    def test_check_defenses(self) -> None:
        """Check that validation covers every defense a command will run."""
        config = build_config({"clients": "1", "defense": "none"}, environ={})
        assert config.problems() == []
        assert config.problems(("none", "normclip")) == []
        assert any(p.startswith("clients") for p in config.problems(("none", "normclip", "feddefender")))
        with pytest.raises(ConfigError):
            config.check(("feddefender",))

    def test_conversions(self) -> None:
        config = build_config({"trigger_row": "5", "trigger_col": "7", "scale_factor": "3",
                               "learning_rate": "0.1", "momentum": "0.5", "discard_above_theta": "off"},
                              environ={})
        spec = config.poison_spec()
        assert spec.trigger_origin == (5, 7) and spec.scale_factor == 3
        hp = config.hyperparams()
        assert hp.learning_rate == 0.1 and hp.momentum == 0.5
        assert config.defense_config().discard_above_theta is False

    def test_override(self) -> None:
        config = build_config(environ={}).override(epochs=15)
        assert config.epochs == 15 and config.is_set("epochs")
        assert ScenarioConfig.keys()[0] == "dataset"
        assert "explicit" not in ScenarioConfig.keys()
