from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import binary_device
from vetbench.events import (
    STRESS_SUITE_SIZES,
    EventSequence,
    SeededRng,
    SequenceError,
    event_choices,
    format_event,
    gen_stress_suites,
    gen_random_suite,
    load_manifest,
    load_sequences,
    parse_event,
    parse_sequence,
)
from vetbench.platform import ActionCommand, DeviceSpec, StatusUpdate
from vetbench.scenarios import fixture_dir
from vetbench.testbed import build_platform

FOUR = [binary_device(n) for n in ("A", "B", "C")] + [DeviceSpec("T", "env", (0, 1, 2, 3, 4), 2)]


def test_same_seed_same_suite(shared_config):
    a = gen_random_suite(shared_config, 20, 15, seed=9)
    b = gen_random_suite(shared_config, 20, 15, seed=9)
    assert a == b
    assert [s.to_text() for s in a] == [s.to_text() for s in b]
    assert gen_random_suite(shared_config, 20, 15, seed=10) != a


def test_streams_are_independent(shared_config):
    a = gen_random_suite(shared_config, 5, 15, seed=1, stream=(0,))
    b = gen_random_suite(shared_config, 5, 15, seed=1, stream=(1,))
    assert a.sequences != b.sequences


def test_max_events_one(shared_config):
    suite = gen_random_suite(shared_config, 50, 1, seed=0)
    assert all(len(s) == 1 for s in suite)


@given(st.integers(1, 30), st.integers(0, 2**40))
def test_lengths_within_bounds_and_events_valid(shared_config, max_events, seed):
    platform = build_platform(shared_config)
    for seq in gen_random_suite(shared_config, 5, max_events, seed):
        assert 1 <= len(seq) <= max_events
        for event in seq:
            platform.check_event(event)


def test_lengths_cover_whole_range(shared_config):
    lengths = {len(s) for s in gen_random_suite(shared_config, 300, 15, seed=4)}
    assert lengths == set(range(1, 16))


def test_per_device_frequency_on_10k_events():
    suite = gen_random_suite(FOUR, 4000, 5, seed=77)
    events = [e for s in suite for e in s][:10_000]
    assert len(events) == 10_000
    counts = Counter(e.device for e in events)
    for device in ("A", "B", "C", "T"):
        assert abs(counts[device] - 2500) <= 0.05 * 2500


def test_value_choice_within_device():
    choices = event_choices(binary_device("A"))
    assert choices == [
        StatusUpdate("A", "OFF"), StatusUpdate("A", "ON"),
        ActionCommand("A", "Off"), ActionCommand("A", "On"),
    ]
    assert event_choices(DeviceSpec("T", "env", (0, 1), 0)) == [StatusUpdate("T", 0), StatusUpdate("T", 1)]


def test_bounded_draws():
    rng = SeededRng(5)
    draws = [rng.below(3) for _ in range(3000)]
    assert set(draws) == {0, 1, 2}
    assert all(abs(draws.count(k) - 1000) < 120 for k in range(3))
    with pytest.raises(ValueError):
        rng.below(0)
    with pytest.raises(ValueError):
        SeededRng(-1)


def test_stress_suites(shared_config):
    suites = gen_stress_suites(shared_config, seed=42)
    assert [len(s) for s in suites] == list(STRESS_SUITE_SIZES)
    assert [s.name for s in suites] == [f"suite{i}" for i in range(1, 7)]
    assert all(1 <= len(seq) <= 15 for s in suites for seq in s)


def test_invalid_arguments(shared_config):
    with pytest.raises(ValueError):
        gen_random_suite(shared_config, -1)
    with pytest.raises(ValueError):
        gen_random_suite(shared_config, 1, max_events=0)
    assert len(gen_random_suite(shared_config, 0)) == 0


# -- files -------------------------------------------------------------------------------


def test_motivating_file(motivating_config):
    suite = load_sequences(fixture_dir("motivating") / "cases" / "home_away.events", motivating_config.device_map)
    (seq,) = suite.sequences
    assert seq.events == (StatusUpdate("HomeMode", "OFF"), StatusUpdate("IndoorMotionSensor", "ON"))


def test_type1_file(shared_config):
    path = fixture_dir("expat") / "cases" / "type1_smoke_then_leak.events"
    (seq,) = load_sequences(path, shared_config.device_map).sequences
    assert seq.events == (StatusUpdate("SmokeDetector", "ON"), StatusUpdate("WaterLeakDetector", "ON"))


def test_manifest_keeps_file_order(shared_config):
    suite = load_manifest(fixture_dir("expat") / "cases.suite", shared_config.device_map)
    listed = [line for line in (fixture_dir("expat") / "cases.suite").read_text().splitlines()
              if line and not line.startswith("#")]
    assert [s.origin for s in suite] == [f"file:{line}" for line in listed]


def test_command_with_spaces(motivating_config):
    assert parse_event("FrontDoor . Open", motivating_config.device_map) == ActionCommand("FrontDoor", "Open")


@pytest.mark.parametrize("text, fragment", [
    ("TV = ON\nToaster = ON\n", ":2: unknown device 'Toaster'"),
    ("FrontDoor = AJAR\n", ":1:"),
    ("FrontDoor.Slam\n", ":1:"),
    ("gibberish\n", ":1:"),
    ("# only a comment\n\n", "no events"),
    ("", "no events"),
])
def test_sequence_errors(shared_config, text, fragment):
    with pytest.raises(SequenceError) as info:
        parse_sequence(text, shared_config.device_map, origin="case.events")
    assert fragment in str(info.value)


def test_empty_sequence_rejected():
    with pytest.raises(SequenceError):
        EventSequence((), "x")


def test_empty_manifest(tmp_path, shared_config):
    path = tmp_path / "empty.suite"
    path.write_text("# nothing\n")
    with pytest.raises(SequenceError):
        load_manifest(path, shared_config.device_map)


def test_text_round_trip(shared_config):
    for seq in gen_random_suite(shared_config, 10, 15, seed=2):
        again = parse_sequence(seq.to_text(), shared_config.device_map)
        assert again.events == seq.events
    assert format_event(ActionCommand("TV", "On")) == "TV.On"
