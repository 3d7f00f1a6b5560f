"""Deterministic in-process smart-home platform.

Devices hold one value each; apps follow trigger-condition-action. Events
are processed synchronously: the external event is applied, matching apps
fire in install order, and each executed action emits a derived status
update that is dispatched depth-first before the next action runs.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Optional, Union

from vetbench.policy import TRUE, Atom, CondExpr, Value, check_expr, devices_of, evaluate

DEFAULT_CHAIN_LIMIT = 25

TAGS = frozenset({"trusted", "secure", "untrusted", "insecure"})
DEFAULT_TAGS = frozenset({"trusted", "secure"})


class PlatformError(ValueError):
    pass


class DeviceKind(str, enum.Enum):
    ACTUATOR = "actuator"
    SENSOR = "sensor"
    ENV = "env"


def default_commands(domain: Iterable[Value]) -> dict:
    """``ON -> On``, ``OPEN -> Open``; integer domains get no commands."""
    return {str(v).title(): v for v in domain if isinstance(v, str)}


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    kind: DeviceKind
    domain: tuple
    initial: Value
    tags: frozenset = DEFAULT_TAGS
    commands: Optional[Mapping] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DeviceKind(self.kind))
        object.__setattr__(self, "domain", tuple(self.domain))
        object.__setattr__(self, "tags", frozenset(self.tags))
        if not self.domain:
            raise PlatformError(f"device {self.id}: empty domain")
        if len(set(self.domain)) != len(self.domain):
            raise PlatformError(f"device {self.id}: duplicate domain values")
        if self.initial not in self.domain:
            raise PlatformError(f"device {self.id}: initial {self.initial!r} not in domain")
        unknown = self.tags - TAGS
        if unknown:
            raise PlatformError(f"device {self.id}: unknown tags {sorted(unknown)}")
        if {"trusted", "untrusted"} <= self.tags or {"secure", "insecure"} <= self.tags:
            raise PlatformError(f"device {self.id}: contradictory tags")
        if self.kind is DeviceKind.ENV:
            commands: dict = {}
        elif self.commands is None:
            commands = default_commands(self.domain) if self.kind is DeviceKind.ACTUATOR else {}
        else:
            commands = dict(self.commands)
        for name, value in commands.items():
            if value not in self.domain:
                raise PlatformError(f"device {self.id}: command {name} targets {value!r}")
        object.__setattr__(self, "commands", commands)

    @property
    def numeric(self) -> bool:
        return all(isinstance(v, int) for v in self.domain)

    def resolve(self, command: str) -> Value:
        try:
            return self.commands[command]
        except KeyError:
            raise PlatformError(f"device {self.id} has no command {command!r}") from None

    def coerce(self, raw) -> Value:
        """Parse a textual value into the domain's type."""
        if self.numeric:
            try:
                value = int(raw)
            except (TypeError, ValueError):
                raise PlatformError(f"{self.id}: {raw!r} is not an integer") from None
        else:
            value = str(raw)
        if value not in self.domain:
            raise PlatformError(f"{self.id}: {value!r} not in domain")
        return value


class SystemState(Mapping):
    """Immutable total assignment of device values in install order."""

    __slots__ = ("_items", "_index")

    def __init__(self, items: Iterable[tuple]):
        self._items = tuple(items)
        self._index = dict(self._items)

    def __getitem__(self, device: str) -> Value:
        return self._index[device]

    def __iter__(self) -> Iterator[str]:
        return (k for k, _ in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other) -> bool:
        if isinstance(other, SystemState):
            return self._items == other._items
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self._items)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v}" for k, v in self._items)
        return f"SystemState({inner})"

    def with_values(self, **changes) -> "SystemState":
        return self.updated(changes)

    def updated(self, changes: Mapping) -> "SystemState":
        for key in changes:
            if key not in self._index:
                raise KeyError(key)
        return SystemState((k, changes.get(k, v)) for k, v in self._items)

    def to_dict(self) -> dict:
        return dict(self._items)


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

EXTERNAL = "external"


@dataclass(frozen=True)
class StatusUpdate:
    device: str
    value: Value
    provenance: str = EXTERNAL

    def __str__(self) -> str:
        return f"{self.device} = {self.value}"


@dataclass(frozen=True)
class ActionCommand:
    device: str
    command: str
    provenance: str = EXTERNAL

    def __str__(self) -> str:
        return f"{self.device}.{self.command}"


Event = Union[StatusUpdate, ActionCommand]


def app_provenance(app_id: str) -> str:
    return f"app:{app_id}"


@dataclass(frozen=True)
class Trigger:
    """Device plus optional predicate on the device's new value."""

    device: str
    predicate: Optional[Atom] = None

    def matches(self, device: str, value: Value) -> bool:
        if device != self.device:
            return False
        return self.predicate is None or self.predicate.holds(value)

    def __str__(self) -> str:
        if self.predicate is None:
            return self.device
        return f"{self.device} {self.predicate.op} {self.predicate.value}"


@dataclass(frozen=True)
class App:
    id: str
    trigger: Trigger
    actions: tuple
    condition: Optional[CondExpr] = None
    # set by the instrumentor: name of the defense whose PEP gates the actions
    pep: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        if not self.actions:
            raise PlatformError(f"app {self.id}: empty action list")

    def effective_condition(self) -> CondExpr:
        return TRUE if self.condition is None else self.condition


# ---------------------------------------------------------------------------
# Policy decision interface
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContemplatedAction:
    device: str
    command: str
    value: Value

    def __str__(self) -> str:
        return f"{self.device}.{self.command}"


@dataclass(frozen=True)
class PdpRequest:
    app_id: str
    trigger: StatusUpdate
    actions: tuple  # tuple[ContemplatedAction, ...]
    state: SystemState
    condition: Optional[CondExpr] = None


@dataclass(frozen=True)
class PdpResponse:
    allow: bool
    violated_policy_ids: tuple = ()

    @property
    def decision(self) -> str:
        return "allow" if self.allow else "deny"


ALLOW = PdpResponse(True)

DefenseHook = Callable[[PdpRequest], PdpResponse]


@dataclass(frozen=True)
class ActionRecord:
    app_id: str
    device: str
    command: str
    value: Value
    allowed: bool
    violated_policy_ids: tuple = ()

    def to_dict(self) -> dict:
        return {
            "app": self.app_id,
            "action": f"{self.device}.{self.command}",
            "allowed": self.allowed,
            "violated_policy_ids": list(self.violated_policy_ids),
        }


@dataclass(frozen=True)
class LogEntry:
    event: Event
    value: Value
    changed: bool


class _ChainLimitExceeded(Exception):
    pass


# ---------------------------------------------------------------------------
# Platform
# ---------------------------------------------------------------------------


@dataclass
class Platform:
    chain_limit: int = DEFAULT_CHAIN_LIMIT
    defense_hook: Optional[DefenseHook] = None
    devices: dict = field(default_factory=dict)
    apps: list = field(default_factory=list)
    event_log: list = field(default_factory=list)
    action_log: list = field(default_factory=list)
    loop_detected: bool = False

    def __post_init__(self):
        if self.chain_limit < 1:
            raise PlatformError("chain_limit must be positive")
        self._values: dict = {d.id: d.initial for d in self.devices.values()}
        self._derived = 0

    # setup ---------------------------------------------------------------

    def install_device(self, spec: DeviceSpec) -> None:
        if spec.id in self.devices:
            raise PlatformError(f"duplicate device {spec.id!r}")
        self.devices[spec.id] = spec
        self._values[spec.id] = spec.initial

    def install_app(self, app: App) -> None:
        if any(a.id == app.id for a in self.apps):
            raise PlatformError(f"duplicate app {app.id!r}")
        self.validate_app(app)
        self.apps.append(app)

    def validate_app(self, app: App) -> None:
        referenced = {app.trigger.device} | {a.device for a in app.actions}
        if app.condition is not None:
            referenced |= devices_of(app.condition)
        missing = sorted(referenced - self.devices.keys())
        if missing:
            raise PlatformError(f"app {app.id}: unknown device {missing[0]!r}")
        if app.trigger.predicate is not None:
            check_expr(app.trigger.predicate, self.devices)
        if app.condition is not None:
            check_expr(app.condition, self.devices)
        for action in app.actions:
            spec = self.devices[action.device]
            if spec.kind is DeviceKind.ENV:
                raise PlatformError(f"app {app.id}: env device {spec.id} takes no commands")
            spec.resolve(action.command)

    # state ---------------------------------------------------------------

    def snapshot(self) -> SystemState:
        return SystemState((d, self._values[d]) for d in self.devices)

    def initial_state(self) -> SystemState:
        return SystemState((d, spec.initial) for d, spec in self.devices.items())

    def reset(self) -> None:
        self._values = {d: spec.initial for d, spec in self.devices.items()}
        self.event_log = []
        self.action_log = []
        self.loop_detected = False

    # events --------------------------------------------------------------

    def check_event(self, event: Event) -> Value:
        """Validate ``event`` and return the value it drives its device to."""
        spec = self.devices.get(event.device)
        if spec is None:
            raise PlatformError(f"unknown device {event.device!r}")
        if isinstance(event, StatusUpdate):
            if event.value not in spec.domain:
                raise PlatformError(f"{event.device}: {event.value!r} not in domain")
            return event.value
        if isinstance(event, ActionCommand):
            if spec.kind is DeviceKind.ENV:
                raise PlatformError(f"env device {spec.id} takes no commands")
            return spec.resolve(event.command)
        raise PlatformError(f"malformed event {event!r}")

    def process_event(self, event: Event) -> list:
        """Apply an external event and run the resulting app cascade.

        Returns the action records (allowed or blocked) contemplated during
        the cascade. Exceeding ``chain_limit`` derived events aborts the
        cascade and sets ``loop_detected``.
        """
        value = self.check_event(event)
        start = len(self.action_log)
        self._derived = 0
        try:
            self._apply(event, value)
        except _ChainLimitExceeded:
            self.loop_detected = True
        return self.action_log[start:]

    def run(self, events: Iterable[Event]) -> SystemState:
        for event in events:
            self.process_event(event)
        return self.snapshot()

    def _apply(self, event: Event, value: Value) -> None:
        changed = self._values[event.device] != value
        self.event_log.append(LogEntry(event, value, changed))
        if not changed:
            return
        self._values[event.device] = value
        trigger = StatusUpdate(event.device, value, event.provenance)
        for app in list(self.apps):
            if not app.trigger.matches(event.device, value):
                continue
            if app.condition is not None and not evaluate(app.condition, self._values):
                continue
            self._fire(app, trigger)

    def _fire(self, app: App, trigger: StatusUpdate) -> None:
        contemplated = tuple(
            ContemplatedAction(a.device, a.command, self.devices[a.device].resolve(a.command))
            for a in app.actions
        )
        response = ALLOW
        if app.pep is not None and self.defense_hook is not None:
            request = PdpRequest(app.id, trigger, contemplated, self.snapshot(), app.condition)
            response = self.defense_hook(request)
        if not response.allow:
            for c in contemplated:
                self.action_log.append(
                    ActionRecord(app.id, c.device, c.command, c.value, False, response.violated_policy_ids)
                )
            return
        for c in contemplated:
            if self._values[c.device] != c.value:
                self._derived += 1
                if self._derived > self.chain_limit:
                    raise _ChainLimitExceeded
            self.action_log.append(ActionRecord(app.id, c.device, c.command, c.value, True))
            derived = StatusUpdate(c.device, c.value, app_provenance(app.id))
            self._apply(derived, c.value)


def instrumented(app: App, defense: str) -> App:
    return replace(app, pep=defense)
