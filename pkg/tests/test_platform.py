import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import binary_device, binary_devices, on_trigger, platform_with, simple_app
from vetbench.events import gen_random_suite
from vetbench.platform import (
    ActionCommand,
    App,
    DeviceKind,
    DeviceSpec,
    PdpResponse,
    Platform,
    PlatformError,
    StatusUpdate,
    SystemState,
    Trigger,
    default_commands,
)
from vetbench.policy import Atom, parse_expr
from vetbench.testbed import build_platform


def motivating_platform(hook=None, pep=None):
    devices = [
        DeviceSpec("IndoorMotionSensor", "sensor", ("OFF", "ON"), "OFF"),
        DeviceSpec("FrontDoor", "actuator", ("CLOSED", "OPEN"), "CLOSED"),
        binary_device("HomeMode", "ON"),
        binary_device("SleepMode", "OFF"),
    ]
    r1 = App("R1", on_trigger("IndoorMotionSensor"), (ActionCommand("FrontDoor", "Open"),), pep=pep)
    return platform_with(devices, [r1], hook=hook)


def flash_pair(chain_limit=25):
    devices = binary_devices(["Lamp", "Fan"]).values()
    apps = [
        App("LampFlash", Trigger("Lamp"), (ActionCommand("Fan", "Off"), ActionCommand("Fan", "On"))),
        App("FanFlash", Trigger("Fan"), (ActionCommand("Lamp", "Off"), ActionCommand("Lamp", "On"))),
    ]
    return platform_with(devices, apps, chain_limit=chain_limit)


# -- devices -----------------------------------------------------------------------


def test_default_commands():
    assert default_commands(("CLOSED", "OPEN")) == {"Closed": "CLOSED", "Open": "OPEN"}
    assert default_commands((1, 2)) == {}
    assert binary_device("S", kind="sensor").commands == {}
    assert DeviceSpec("T", "env", (1, 2), 1, commands={"Up": 2}).commands == {}


@pytest.mark.parametrize("kwargs", [
    dict(domain=(), initial="OFF"),
    dict(domain=("OFF", "OFF"), initial="OFF"),
    dict(domain=("OFF", "ON"), initial="DIM"),
    dict(domain=("OFF", "ON"), initial="OFF", tags={"shiny"}),
    dict(domain=("OFF", "ON"), initial="OFF", tags={"trusted", "untrusted"}),
    dict(domain=("OFF", "ON"), initial="OFF", commands={"Dim": "DIM"}),
])
def test_device_validation(kwargs):
    with pytest.raises(PlatformError):
        DeviceSpec("X", "actuator", **kwargs)


def test_coerce():
    temp = DeviceSpec("T", "env", tuple(range(10)), 0)
    assert temp.coerce("7") == 7
    with pytest.raises(PlatformError):
        temp.coerce("warm")
    with pytest.raises(PlatformError):
        temp.coerce("11")


# -- installation ------------------------------------------------------------------


def test_install_rejects_unknown_devices_and_duplicates():
    p = platform_with([binary_device("A")])
    with pytest.raises(PlatformError, match="'B'"):
        p.install_app(simple_app("x", "A", [("B", "On")]))
    with pytest.raises(PlatformError):
        p.install_device(binary_device("A"))
    p.install_app(simple_app("x", "A", [("A", "Off")]))
    with pytest.raises(PlatformError):
        p.install_app(simple_app("x", "A", [("A", "Off")]))


def test_install_rejects_bad_command_and_env_target():
    p = platform_with([binary_device("A"), DeviceSpec("T", "env", (0, 1), 0)])
    with pytest.raises(PlatformError):
        p.install_app(simple_app("x", "A", [("A", "Dim")]))
    with pytest.raises(PlatformError):
        p.install_app(App("y", Trigger("A"), (ActionCommand("T", "On"),)))


def test_empty_action_list_rejected():
    with pytest.raises(PlatformError):
        App("x", Trigger("A"), ())


# -- processing --------------------------------------------------------------------


def test_motivating_vanilla_opens_door():
    p = motivating_platform()
    p.process_event(StatusUpdate("HomeMode", "OFF"))
    records = p.process_event(StatusUpdate("IndoorMotionSensor", "ON"))
    assert [(r.app_id, r.device, r.command, r.allowed) for r in records] == [("R1", "FrontDoor", "Open", True)]
    assert p.snapshot()["FrontDoor"] == "OPEN"
    assert not p.loop_detected


def test_hook_deny_blocks_every_action():
    seen = []

    def deny(req):
        seen.append(req)
        return PdpResponse(False, ("P",))

    devices = binary_devices(["A", "B", "C"]).values()
    app = App("x", on_trigger("A"), (ActionCommand("B", "On"), ActionCommand("C", "On")), pep="test")
    p = platform_with(devices, [app], hook=deny)
    records = p.process_event(StatusUpdate("A", "ON"))
    assert [r.allowed for r in records] == [False, False]
    assert all(r.violated_policy_ids == ("P",) for r in records)
    assert p.snapshot().to_dict() == {"A": "ON", "B": "OFF", "C": "OFF"}
    assert len(seen) == 1 and [a.device for a in seen[0].actions] == ["B", "C"]
    assert seen[0].state["A"] == "ON"


def test_uninstrumented_app_ignores_hook():
    p = motivating_platform(hook=lambda req: PdpResponse(False, ("P",)))
    p.process_event(StatusUpdate("IndoorMotionSensor", "ON"))
    assert p.snapshot()["FrontDoor"] == "OPEN"


def test_external_command_is_not_gated():
    p = motivating_platform(hook=lambda req: PdpResponse(False, ("P",)), pep="expat")
    p.process_event(ActionCommand("FrontDoor", "Open"))
    assert p.snapshot()["FrontDoor"] == "OPEN"


def test_edge_triggering():
    p = motivating_platform()
    p.process_event(StatusUpdate("IndoorMotionSensor", "ON"))
    p.process_event(StatusUpdate("FrontDoor", "CLOSED"))
    again = p.process_event(StatusUpdate("IndoorMotionSensor", "ON"))
    assert again == []
    assert p.snapshot()["FrontDoor"] == "CLOSED"
    assert p.event_log[-1].changed is False


def test_install_order_and_depth_first():
    devices = binary_devices(["X", "Y", "Z", "W", "V"]).values()
    apps = [
        simple_app("first", "X", [("Y", "On"), ("Z", "On")]),
        simple_app("second", "X", [("V", "On")]),
        simple_app("chain", "Y", [("W", "On")]),
    ]
    p = platform_with(devices, apps)
    records = p.process_event(StatusUpdate("X", "ON"))
    assert [(r.app_id, r.device) for r in records] == [
        ("first", "Y"), ("chain", "W"), ("first", "Z"), ("second", "V"),
    ]
    provenance = [e.event.provenance for e in p.event_log]
    assert provenance == ["external", "app:first", "app:chain", "app:first", "app:second"]


def test_condition_checked_after_trigger_applied():
    devices = [DeviceSpec("T", "env", tuple(range(100)), 60), binary_device("AC")]
    app = App("cool", Trigger("T"), (ActionCommand("AC", "On"),), parse_expr("T > 70"))
    p = platform_with(devices, [app])
    p.process_event(StatusUpdate("T", 65))
    assert p.snapshot()["AC"] == "OFF"
    p.process_event(StatusUpdate("T", 90))
    assert p.snapshot()["AC"] == "ON"


@pytest.mark.parametrize("limit", [1, 5, 25])
def test_mutual_trigger_loop_stops_at_limit(limit):
    p = flash_pair(limit)
    p.process_event(StatusUpdate("Lamp", "ON"))
    assert p.loop_detected
    derived_changes = [e for e in p.event_log if e.changed and e.event.provenance != "external"]
    assert len(derived_changes) == limit


def test_loop_flag_cleared_by_reset():
    p = flash_pair()
    p.process_event(StatusUpdate("Lamp", "ON"))
    p.reset()
    assert not p.loop_detected
    assert p.snapshot() == p.initial_state()
    assert p.event_log == [] and p.action_log == []


def test_no_loop_for_terminating_cascade():
    devices = binary_devices(["A", "B"]).values()
    apps = [simple_app("ab", "A", [("B", "On")]), simple_app("ba", "B", [("A", "On")])]
    p = platform_with(devices, apps)
    p.process_event(StatusUpdate("A", "ON"))
    assert not p.loop_detected
    assert p.snapshot().to_dict() == {"A": "ON", "B": "ON"}


@pytest.mark.parametrize("event", [
    StatusUpdate("Ghost", "ON"),
    StatusUpdate("FrontDoor", "AJAR"),
    ActionCommand("FrontDoor", "Slam"),
])
def test_malformed_events(event):
    with pytest.raises(PlatformError):
        motivating_platform().process_event(event)


def test_env_device_rejects_commands():
    p = platform_with([DeviceSpec("T", "env", (0, 1), 0)])
    with pytest.raises(PlatformError):
        p.process_event(ActionCommand("T", "On"))


# -- state ---------------------------------------------------------------------------


def test_system_state_is_immutable_and_ordered():
    s = SystemState([("B", 1), ("A", 2)])
    assert list(s) == ["B", "A"]
    t = s.updated({"A": 3})
    assert s["A"] == 2 and t["A"] == 3
    assert hash(s) == hash(SystemState([("B", 1), ("A", 2)]))
    with pytest.raises(KeyError):
        s.updated({"C": 0})
    with pytest.raises(TypeError):
        s["A"] = 5


def test_snapshot_then_reset(shared_config):
    p = build_platform(shared_config)
    init = p.snapshot()
    p.run([StatusUpdate("TV", "OFF"), StatusUpdate("TV", "ON")])
    assert p.snapshot() != init
    p.reset()
    assert p.snapshot() == init


@given(st.integers(0, 2**32 - 1))
def test_totality_and_log_replay(shared_config, seed):
    """Any valid sequence processes, and replaying the event log rebuilds the state."""
    suite = gen_random_suite(shared_config, 3, 15, seed)
    p = build_platform(shared_config)
    for seq in suite:
        p.reset()
        p.run(seq)
        replay = dict(p.initial_state())
        for entry in p.event_log:
            replay[entry.event.device] = entry.value
        assert replay == p.snapshot().to_dict()
        assert all(p.snapshot()[d] in spec.domain for d, spec in p.devices.items())


def test_device_kinds():
    assert {k.value for k in DeviceKind} == {"actuator", "sensor", "env"}
    assert Atom("A", "=", "ON").holds("ON")
