"""Testcase event sequences: hand-written files and seeded random suites.

Sequence files hold one external event per line, either a status update
``Device = VALUE`` or a command ``Device.Command``. A suite manifest lists
sequence files, one path per line, relative to the manifest.

Random suites draw from PCG64 (numpy's bit generator, seeded through
``SeedSequence``) and map raw 64-bit outputs to bounded integers by
rejection sampling, so a (testbed, count, max_events, seed) tuple always
yields the same suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from vetbench.platform import ActionCommand, DeviceKind, DeviceSpec, Event, StatusUpdate
from vetbench.policy import strip_comment

DEFAULT_MAX_EVENTS = 15
STRESS_SUITE_SIZES = (5, 10, 15, 25, 35, 50)


class SequenceError(ValueError):
    pass


class SeededRng:
    """PCG64 stream with an unbiased ``below(n)``."""

    _SPAN = 1 << 64

    def __init__(self, seed: int, *stream: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self._bits = np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(stream)))

    def next_u64(self) -> int:
        return int(self._bits.random_raw())

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = self._SPAN - (self._SPAN % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n


@dataclass(frozen=True)
class EventSequence:
    events: tuple
    origin: str
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not self.events:
            raise SequenceError(f"{self.name or self.origin}: empty event sequence")

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def to_text(self) -> str:
        return "".join(f"{format_event(e)}\n" for e in self.events)


@dataclass(frozen=True)
class TestSuite:
    __test__ = False  # not a pytest class

    name: str
    sequences: tuple = field(default_factory=tuple)
    source: str = ""

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def format_event(event: Event) -> str:
    if isinstance(event, ActionCommand):
        return f"{event.device}.{event.command}"
    return f"{event.device} = {event.value}"


def parse_event(text: str, devices: Mapping[str, DeviceSpec]) -> Event:
    text = text.strip()
    if "=" in text:
        device, raw = (part.strip() for part in text.split("=", 1))
        spec = devices.get(device)
        if spec is None:
            raise SequenceError(f"unknown device {device!r}")
        try:
            return StatusUpdate(device, spec.coerce(raw))
        except ValueError as exc:
            raise SequenceError(str(exc)) from None
    if "." in text:
        device, command = (part.strip() for part in text.split(".", 1))
        spec = devices.get(device)
        if spec is None:
            raise SequenceError(f"unknown device {device!r}")
        if spec.kind is DeviceKind.ENV or command not in spec.commands:
            raise SequenceError(f"{device} has no command {command!r}")
        return ActionCommand(device, command)
    raise SequenceError(f"cannot parse event {text!r}")


def parse_sequence(text: str, devices: Mapping[str, DeviceSpec], origin: str = "<string>") -> EventSequence:
    events = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = strip_comment(raw)
        if not line:
            continue
        try:
            events.append(parse_event(line, devices))
        except SequenceError as exc:
            raise SequenceError(f"{origin}:{lineno}: {exc}") from None
    if not events:
        raise SequenceError(f"{origin}: no events")
    return EventSequence(tuple(events), origin, Path(origin).stem)


def load_sequence(path, devices: Mapping[str, DeviceSpec]) -> EventSequence:
    path = Path(path)
    return parse_sequence(path.read_text(encoding="utf-8"), devices, origin=str(path))


def load_manifest(path, devices: Mapping[str, DeviceSpec], name: str | None = None) -> TestSuite:
    path = Path(path)
    sequences = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = strip_comment(raw)
        if line:
            seq = load_sequence(path.parent / line, devices)
            sequences.append(EventSequence(seq.events, f"file:{line}", Path(line).stem))
    if not sequences:
        raise SequenceError(f"{path}: empty suite manifest")
    return TestSuite(name or path.stem, tuple(sequences), str(path))


def load_sequences(path, devices: Mapping[str, DeviceSpec]) -> TestSuite:
    """Load a suite manifest (``*.suite``) or a single ``*.events`` file."""
    path = Path(path)
    if path.suffix == ".suite":
        return load_manifest(path, devices)
    seq = load_sequence(path, devices)
    seq = EventSequence(seq.events, f"file:{path.name}", path.stem)
    return TestSuite(path.stem, (seq,), str(path))


# ---------------------------------------------------------------------------
# Random generation
# ---------------------------------------------------------------------------


def event_choices(spec: DeviceSpec) -> list:
    """External events possible on one device: every value, every command."""
    choices: list = [StatusUpdate(spec.id, v) for v in spec.domain]
    if spec.kind is not DeviceKind.ENV:
        choices.extend(ActionCommand(spec.id, c) for c in spec.commands)
    return choices


def _devices_of(source) -> list:
    devices = getattr(source, "devices", source)
    if isinstance(devices, Mapping):
        devices = devices.values()
    return list(devices)


def gen_random_suite(
    source,
    count: int,
    max_events: int = DEFAULT_MAX_EVENTS,
    seed: int = 0,
    name: str | None = None,
    stream: Sequence[int] = (),
) -> TestSuite:
    """``count`` random sequences with lengths uniform in ``[1, max_events]``.

    A device is picked uniformly, then one of its values or commands
    uniformly. ``source`` is a config, a device mapping or a device list.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if max_events < 1:
        raise ValueError("max_events must be at least 1")
    devices = _devices_of(source)
    if not devices:
        raise ValueError("no devices to generate events for")
    choices = [event_choices(d) for d in devices]
    rng = SeededRng(seed, *stream)
    sequences = []
    for index in range(count):
        length = 1 + rng.below(max_events)
        events = []
        for _ in range(length):
            options = choices[rng.below(len(choices))]
            events.append(options[rng.below(len(options))])
        sequences.append(EventSequence(tuple(events), f"random:seed={seed}:index={index}", f"tc{index:03d}"))
    label = name or f"random-{count}"
    return TestSuite(label, tuple(sequences), f"seed={seed}")


def gen_stress_suites(source, seed: int, sizes: Iterable[int] = STRESS_SUITE_SIZES,
                     max_events: int = DEFAULT_MAX_EVENTS, stream: Sequence[int] = ()) -> list:
    """The stress-testing layout: one suite per size, independent streams."""
    return [
        gen_random_suite(source, size, max_events, seed, name=f"suite{i + 1}", stream=(*stream, i))
        for i, size in enumerate(sizes)
    ]
