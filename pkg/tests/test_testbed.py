import random

import pytest

from vetbench.defenses import DefenseKind, PolicyCompileError
from vetbench.events import gen_random_suite
from vetbench.harness import run_testcase
from vetbench.platform import StatusUpdate
from vetbench.scenarios import FIXTURES_DIR, load_suite, load_testbed
from vetbench.testbed import (
    ConfigError,
    config_from_dict,
    dump_config,
    instantiate,
    load_config,
    parse_trigger,
    save_config,
)

TESTBEDS = ["motivating", "expat", "patriot", "iotguard"]


def minimal(**overrides):
    data = {
        "device": [
            {"id": "Lamp", "domain": ["OFF", "ON"], "initial": "OFF"},
            {"id": "Motion", "kind": "sensor", "domain": ["OFF", "ON"], "initial": "OFF"},
        ],
        "app": [{"id": "a", "trigger": "Motion = ON", "actions": ["Lamp.On"]}],
    }
    data.update(overrides)
    return data


def test_motivating_fixture_shape(motivating_config):
    assert [d.id for d in motivating_config.devices] == [
        "IndoorMotionSensor", "FrontDoor", "HomeMode", "SleepMode",
    ]
    assert [a.id for a in motivating_config.apps] == ["R1"]
    assert {p.id for p in motivating_config.parsed_policies()} == {"P1"}
    assert motivating_config.defense is DefenseKind.EXPAT


@pytest.mark.parametrize("name", TESTBEDS)
def test_fixtures_load_and_round_trip(tmp_path, name):
    config = load_testbed(name)
    path = tmp_path / "copy.cfg"
    save_config(config, path)
    again = load_config(path)
    assert again == config
    assert dump_config(again) == dump_config(config)


def test_unavailable_inventory_is_recorded():
    for name in ("expat", "patriot", "iotguard"):
        assert load_testbed(name).unavailable


def test_app_with_missing_device_names_it():
    data = minimal(app=[{"id": "a", "trigger": "Motion = ON", "actions": ["Toaster.On"]}])
    with pytest.raises(ConfigError, match="Toaster"):
        config_from_dict(data)


@pytest.mark.parametrize("mutation, message", [
    (lambda d: d.update(device=[]), "no devices"),
    (lambda d: d["device"].append(dict(d["device"][0])), "duplicate device"),
    (lambda d: d["app"].append(dict(d["app"][0])), "duplicate app"),
    (lambda d: d.update(defense="firewall"), "unknown defense"),
    (lambda d: d.update(chain_limit=0), "chain_limit"),
    (lambda d: d["device"][0].pop("initial"), "initial"),
    (lambda d: d["app"][0].pop("actions"), "actions"),
    (lambda d: d["app"][0].update(actions=["LampOn"]), "Device.Command"),
    (lambda d: d["app"][0].update(condition="Ghost = ON"), "Ghost"),
    (lambda d: d.update(policy=[{"text": "P: invariant Lamp = PURPLE"}]), "PURPLE"),
])
def test_config_errors(mutation, message):
    data = minimal()
    mutation(data)
    with pytest.raises(ConfigError, match=message):
        config_from_dict(data)


def test_bad_toml(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("name = [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_range_domain_and_trigger_forms():
    data = minimal()
    data["device"].append({"id": "Temp", "kind": "env", "range": [0, 3], "initial": 1})
    config = config_from_dict(data)
    assert config.device_map["Temp"].domain == (0, 1, 2, 3)
    assert parse_trigger("Temp", config.device_map).predicate is None
    assert parse_trigger("Temp >= 2", config.device_map).predicate.op == ">="
    with pytest.raises(ConfigError):
        parse_trigger("Nope", config.device_map)


# -- instantiation -------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["none", "expat", "patriot", "iotguard"])
def test_paired_identity(shared_config, kind):
    pair = instantiate(shared_config, kind)
    assert pair.vanilla.initial_state() == pair.defended.initial_state()
    assert pair.vanilla.devices == pair.defended.devices
    strip = [(a.id, a.trigger, a.actions, a.condition) for a in pair.defended.apps]
    assert strip == [(a.id, a.trigger, a.actions, a.condition) for a in pair.vanilla.apps]
    assert all(a.pep is None for a in pair.vanilla.apps)
    assert all((a.pep is None) == (kind == "none") for a in pair.defended.apps)


def test_same_infrastructure_across_defenses(shared_config):
    pairs = [instantiate(shared_config, k) for k in ("expat", "patriot", "iotguard")]
    reference = pairs[0].vanilla
    for pair in pairs[1:]:
        assert pair.vanilla.devices == reference.devices
        assert pair.vanilla.apps == reference.apps


def test_vanilla_defense_behaves_like_vanilla(shared_config):
    pair = instantiate(shared_config, "none")
    assert pair.engine is None
    for seq in gen_random_suite(shared_config, 20, 15, seed=3):
        pair.reset()
        assert pair.vanilla.run(seq) == pair.defended.run(seq)


def test_expat_blocks_front_door(motivating_config):
    pair = instantiate(motivating_config, "expat")
    events = [StatusUpdate("HomeMode", "OFF"), StatusUpdate("IndoorMotionSensor", "ON")]
    assert pair.vanilla.run(events)["FrontDoor"] == "OPEN"
    assert pair.defended.run(events)["FrontDoor"] == "CLOSED"


def test_compile_error_for_unsupported_defense(patriot_config):
    with pytest.raises(PolicyCompileError):
        instantiate(patriot_config, "iotguard")


def test_reset_returns_to_initial(iotguard_config):
    pair = instantiate(iotguard_config, "iotguard")
    pair.vanilla.run([StatusUpdate("MotionSensor", "ACTIVE")])
    pair.defended.run([StatusUpdate("MotionSensor", "ACTIVE")])
    pair.reset()
    assert pair.vanilla.snapshot() == pair.vanilla.initial_state()
    assert pair.defended.snapshot() == pair.defended.initial_state()
    assert pair.engine.server.model.nodes == set()


@pytest.mark.parametrize("kind", ["expat", "patriot", "iotguard"])
def test_verdicts_independent_of_order(shared_config, kind):
    suite = list(load_suite("expat", config=shared_config)) + list(gen_random_suite(shared_config, 15, 15, 8))
    pair = instantiate(shared_config, kind)
    forward = {i: run_testcase(pair, s).to_dict() for i, s in enumerate(suite)}
    order = list(range(len(suite)))
    random.Random(1).shuffle(order)
    shuffled = {i: run_testcase(pair, suite[i]).to_dict() for i in order}
    assert forward == shuffled


def test_fixture_layout():
    for name in TESTBEDS:
        base = FIXTURES_DIR / name
        assert (base / "testbed.cfg").is_file()
        assert (base / "policies.txt").is_file()
        assert list((base / "cases").glob("*.events"))
