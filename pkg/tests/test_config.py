import json
from pathlib import Path

import pytest

from dhrl.config import (
    ConfigError,
    ExperimentConfig,
    delay_spec,
    dumps_config,
    expand_instances,
    load_config,
    loads_config,
)
from dhrl.envs import make_flip
from dhrl.io import save_mdp
from dhrl.simulator import ConservativeDelay, FixedDelay, RandomDelay

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_checked_in_configs_round_trip(path):
    cfg = load_config(path)
    again = loads_config(dumps_config(cfg), CONFIGS)
    assert again == cfg
    assert dumps_config(again) == dumps_config(cfg)


def test_defaults():
    cfg = loads_config('{"environment": {"generator": "flip"}}')
    assert cfg == ExperimentConfig(environment=cfg.environment)
    assert cfg.abstraction.epsilons == (None,)
    (inst,) = expand_instances(cfg)
    assert inst.instance_id == "flip" and inst.delay == 0 and inst.base == make_flip()


def test_choice_params_and_sampled_delays_are_reproducible():
    text = json.dumps({
        "environment": {"generator": "random", "params": {"num_states": {"choice": [2, 5]}, "num_actions": 2}, "count": 30, "seed": 4},
        "delay": {"values": [1, 2, 3], "per_instance": True},
    })
    a, b = expand_instances(loads_config(text)), expand_instances(loads_config(text))
    assert [(i.instance_id, i.delay, i.params) for i in a] == [(i.instance_id, i.delay, i.params) for i in b]
    assert all(x.base == y.base for x, y in zip(a, b))
    assert {i.base.num_states for i in a} == {2, 5}
    assert {i.delay for i in a} == {1, 2, 3}
    assert a[0].instance_id == "random-000" and len(a) == 30


def test_crossed_delays():
    cfg = loads_config('{"environment": {"generator": "chain", "params": {"n": 3}}, "delay": {"values": [0, 2]}}')
    assert [i.delay for i in expand_instances(cfg)] == [0, 2]


def test_random_delay_is_planned_at_its_maximum():
    cfg = loads_config('{"environment": {"generator": "flip"}, "delay": {"max_delay": 3}}')
    assert cfg.delay.values == (3,) and cfg.delay.probs == pytest.approx((1 / 3,) * 3)
    spec = delay_spec(cfg, 3)
    assert isinstance(spec, ConservativeDelay) and spec.max_delay == 3
    assert spec.source == RandomDelay(cfg.delay.probs)
    fixed = loads_config('{"environment": {"generator": "flip"}, "delay": {"values": [2]}}')
    assert delay_spec(fixed, 2) == FixedDelay(2)


def test_file_environment(tmp_path):
    save_mdp(make_flip(0.7), tmp_path / "m.json")
    (tmp_path / "c.json").write_text('{"environment": {"file": "m.json"}}')
    (inst,) = expand_instances(load_config(tmp_path / "c.json"))
    assert inst.base == make_flip(0.7) and inst.instance_id == "m"


@pytest.mark.parametrize(
    "text, line, fieldname",
    [
        ('{\n"environment": {"generator": "flip"},\n"delay": {"values": [-1]}\n}', 3, "delay.values"),
        ('{\n"environment": {"generator": "nope"}\n}', 2, "environment.generator"),
        ('{\n"environment": {"generator": "flip"},\n"abstraction": {\n  "epsilons": [1.0]}\n}', 4, "abstraction.epsilons"),
        ('{\n"environment": {"generator": "flip"},\n"solver": {"tol": 0}\n}', 3, "solver.tol"),
        ('{\n"environment": {"generator": "flip"},\n"bogus": 1\n}', 3, "bogus"),
        ('{\n"environment": {"generator": "flip"},\n"qlearning": {"enabled": "yes"}\n}', 3, "qlearning.enabled"),
        ('{\n"environment": {"file": "missing.json"}\n}', 2, "environment.file"),
        ('{\n"environment": {"generator": "flip"},\n"delay": {"max_delay": 2, "probs": [0.5, 0.6]}\n}', 3, "delay.probs"),
    ],
)
def test_errors_name_field_and_line(text, line, fieldname):
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    assert info.value.field_path == fieldname
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_json_syntax_error_has_line():
    with pytest.raises(ConfigError, match="line 3"):
        loads_config('{\n"environment": {"generator": "flip"},\n}')


def test_missing_environment():
    with pytest.raises(ConfigError, match="environment"):
        loads_config("{}")


def test_bad_generator_params_are_reported():
    cfg = loads_config('{"environment": {"generator": "flip", "params": {"width": 3}}}')
    with pytest.raises(ConfigError, match="environment.params"):
        expand_instances(cfg)
