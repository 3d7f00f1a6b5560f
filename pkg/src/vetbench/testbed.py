"""Testbed configuration files and paired vanilla/defended instantiation.

A testbed config is TOML::

    name = "motivating"
    defense = "expat"            # expat | patriot | iotguard | none
    chain_limit = 25             # optional
    seed = 7                     # optional
    policy_file = "policies.txt" # optional, relative to the config
    unavailable = ["..."]        # optional notes on inventory not modelled

    [[device]]
    id = "FrontDoor"
    kind = "actuator"            # actuator | sensor | env
    domain = ["CLOSED", "OPEN"]  # or: range = [0, 120]
    initial = "CLOSED"
    tags = ["trusted", "secure"] # optional, this is the default
    commands = { Open = "OPEN", Close = "CLOSED" }  # optional

    [[app]]
    id = "R1"
    trigger = "IndoorMotionSensor = ON"   # or a bare device: fires on any change
    condition = "HomeMode = ON"           # optional
    actions = ["FrontDoor.Open"]

    [[policy]]
    text = "P1: deny-if action FrontDoor.Open when HomeMode = OFF"
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from vetbench.defenses import DefenseKind, instrument, make_engine, select_policies
from vetbench.platform import (
    DEFAULT_CHAIN_LIMIT,
    DEFAULT_TAGS,
    ActionCommand,
    App,
    DeviceSpec,
    Platform,
    PlatformError,
    SystemState,
    Trigger,
    default_commands,
)
from vetbench.policy import PolicyError, parse_atom, parse_expr, parse_policy, pretty, strip_comment


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TestbedConfig:
    __test__ = False

    name: str
    devices: tuple
    apps: tuple
    policies: tuple = ()  # policy lines, "id: keyword body"
    defense: DefenseKind = DefenseKind.NONE
    chain_limit: int = DEFAULT_CHAIN_LIMIT
    seed: Optional[int] = None
    base_dir: Optional[Path] = field(default=None, compare=False)
    unavailable: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "defense", DefenseKind(self.defense))
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "apps", tuple(self.apps))
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "unavailable", tuple(self.unavailable))

    @property
    def device_map(self) -> dict:
        return {d.id: d for d in self.devices}

    def parsed_policies(self) -> list:
        devices = self.device_map
        return [parse_policy(text, devices=devices) for text in self.policies]

    def with_defense(self, defense) -> "TestbedConfig":
        return TestbedConfig(
            self.name, self.devices, self.apps, self.policies, DefenseKind(defense),
            self.chain_limit, self.seed, self.base_dir, self.unavailable,
        )

    def without_policies(self) -> "TestbedConfig":
        return TestbedConfig(
            self.name, self.devices, self.apps, (), self.defense,
            self.chain_limit, self.seed, self.base_dir, self.unavailable,
        )

    def resolve(self, relative) -> Path:
        base = self.base_dir or Path.cwd()
        return base / relative


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------


def parse_trigger(text: str, devices=None) -> Trigger:
    text = text.strip()
    if any(op in text for op in "=<>!≠≤≥"):
        atom = parse_atom(text, devices)
        return Trigger(atom.device, atom)
    if devices is not None and text not in devices:
        raise ConfigError(f"unknown device {text!r}")
    return Trigger(text)


def parse_action(text: str) -> ActionCommand:
    device, sep, command = text.partition(".")
    if not sep or not device.strip() or not command.strip():
        raise ConfigError(f"action must look like Device.Command, got {text!r}")
    return ActionCommand(device.strip(), command.strip())


def _device_from_table(table: dict) -> DeviceSpec:
    try:
        did = table["id"]
        if "range" in table:
            lo, hi = table["range"]
            domain = tuple(range(int(lo), int(hi) + 1))
        else:
            domain = tuple(table["domain"])
        return DeviceSpec(
            id=did,
            kind=table.get("kind", "actuator"),
            domain=domain,
            initial=table["initial"],
            tags=frozenset(table.get("tags", DEFAULT_TAGS)),
            commands=table.get("commands"),
        )
    except KeyError as exc:
        raise ConfigError(f"device entry missing {exc.args[0]!r}: {table}") from None
    except (PlatformError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _app_from_table(table: dict, devices: dict) -> App:
    try:
        aid = table["id"]
        trigger_text = table["trigger"]
        action_texts = table["actions"]
    except KeyError as exc:
        raise ConfigError(f"app entry missing {exc.args[0]!r}: {table}") from None
    try:
        trigger = parse_trigger(trigger_text, devices)
        condition = table.get("condition")
        cond = parse_expr(condition, devices) if condition else None
        actions = tuple(parse_action(a) for a in action_texts)
        for a in actions:
            if a.device not in devices:
                raise ConfigError(f"unknown device {a.device!r}")
            devices[a.device].resolve(a.command)
        return App(aid, trigger, actions, cond)
    except (PolicyError, PlatformError) as exc:
        raise ConfigError(f"app {aid}: {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"app {aid}: {exc}") from None


def config_from_dict(data: dict, base_dir: Path | None = None) -> TestbedConfig:
    devices = [_device_from_table(t) for t in data.get("device", [])]
    if not devices:
        raise ConfigError("testbed has no devices")
    device_map: dict = {}
    for d in devices:
        if d.id in device_map:
            raise ConfigError(f"duplicate device {d.id!r}")
        device_map[d.id] = d
    apps = [_app_from_table(t, device_map) for t in data.get("app", [])]
    seen = set()
    for a in apps:
        if a.id in seen:
            raise ConfigError(f"duplicate app {a.id!r}")
        seen.add(a.id)

    policy_texts = []
    if "policy_file" in data:
        path = (base_dir or Path.cwd()) / data["policy_file"]
        for raw in path.read_text(encoding="utf-8").splitlines():
            line = strip_comment(raw)
            if line:
                policy_texts.append(line)
    for table in data.get("policy", []):
        policy_texts.append(table["text"].strip())
    for text in policy_texts:
        try:
            parse_policy(text, devices=device_map)
        except PolicyError as exc:
            raise ConfigError(f"policy {text!r}: {exc}") from None

    try:
        defense = DefenseKind(data.get("defense", "none"))
    except ValueError:
        raise ConfigError(f"unknown defense {data.get('defense')!r}") from None
    chain_limit = int(data.get("chain_limit", DEFAULT_CHAIN_LIMIT))
    if chain_limit < 1:
        raise ConfigError("chain_limit must be positive")
    seed = data.get("seed")
    return TestbedConfig(
        name=data.get("name", "testbed"),
        devices=tuple(devices),
        apps=tuple(apps),
        policies=tuple(policy_texts),
        defense=defense,
        chain_limit=chain_limit,
        seed=None if seed is None else int(seed),
        base_dir=base_dir,
        unavailable=tuple(str(x) for x in data.get("unavailable", ())),
    )


def load_config(path) -> TestbedConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def _device_to_table(d: DeviceSpec) -> dict:
    table: dict = {"id": d.id, "kind": d.kind.value}
    values = list(d.domain)
    if d.numeric and values == list(range(values[0], values[-1] + 1)):
        table["range"] = [values[0], values[-1]]
    else:
        table["domain"] = values
    table["initial"] = d.initial
    table["tags"] = sorted(d.tags)
    implied = default_commands(d.domain) if d.kind.value == "actuator" else {}
    if d.commands != implied:
        table["commands"] = dict(d.commands)
    return table


def _app_to_table(a: App) -> dict:
    table: dict = {"id": a.id, "trigger": str(a.trigger)}
    if a.condition is not None:
        table["condition"] = pretty(a.condition)
    table["actions"] = [f"{x.device}.{x.command}" for x in a.actions]
    return table


def config_to_dict(config: TestbedConfig) -> dict:
    data: dict = {
        "name": config.name,
        "defense": config.defense.value,
        "chain_limit": config.chain_limit,
    }
    if config.seed is not None:
        data["seed"] = config.seed
    if config.unavailable:
        data["unavailable"] = list(config.unavailable)
    data["device"] = [_device_to_table(d) for d in config.devices]
    if config.apps:
        data["app"] = [_app_to_table(a) for a in config.apps]
    if config.policies:
        data["policy"] = [{"text": t} for t in config.policies]
    return data


def dump_config(config: TestbedConfig) -> str:
    return tomli_w.dumps(config_to_dict(config))


def save_config(config: TestbedConfig, path) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")


# ---------------------------------------------------------------------------
# Instantiation
# ---------------------------------------------------------------------------


@dataclass
class TestbedPair:
    __test__ = False

    config: TestbedConfig
    vanilla: Platform
    defended: Platform
    engine: object = None

    @property
    def defense(self) -> DefenseKind:
        return self.config.defense

    def reset(self) -> None:
        reset_pair(self)

    def initial_state(self) -> SystemState:
        return self.vanilla.initial_state()


def build_platform(config: TestbedConfig, defense: DefenseKind = DefenseKind.NONE, hook=None) -> Platform:
    platform = Platform(chain_limit=config.chain_limit, defense_hook=hook)
    for d in config.devices:
        platform.install_device(d)
    for app in config.apps:
        platform.install_app(app if defense is DefenseKind.NONE else instrument(app, defense))
    return platform


def instantiate(config: TestbedConfig, defense=None, fail_open: bool = True) -> TestbedPair:
    """Build the vanilla platform and the defended platform for ``config``.

    Both share devices, apps and initial state; only the defended one has
    instrumented apps and a policy engine.
    """
    kind = config.defense if defense is None else DefenseKind(defense)
    if kind is not config.defense:
        config = config.with_defense(kind)
    devices = config.device_map
    policies = select_policies(kind, config.parsed_policies())
    options = {"fail_open": fail_open} if kind is DefenseKind.IOTGUARD else {}
    engine = make_engine(kind, policies, devices, **options)
    vanilla = build_platform(config)
    defended = build_platform(config, kind, engine)
    return TestbedPair(config, vanilla, defended, engine)


def reset_pair(pair: TestbedPair) -> None:
    pair.vanilla.reset()
    pair.defended.reset()
    if pair.engine is not None:
        pair.engine.reset()
