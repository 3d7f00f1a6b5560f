"""Golden regression scenarios shipped with the package.

``fixtures/scenarios.toml`` lists each scenario: the testbed directory, the
event file under its ``cases/`` folder, and the verdict expected from each
defense. :func:`verify_fixture` replays the scenario and reports any cell
that disagrees, with a per-event debug trace.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from vetbench.defenses import DefenseKind
from vetbench.events import EventSequence, load_manifest, load_sequence
from vetbench.harness import Outcome, Verdict, run_testcase
from vetbench.testbed import TestbedConfig, instantiate, load_config

FIXTURES_DIR = Path(__file__).parent / "fixtures"
CONFIG_NAME = "testbed.cfg"


def fixture_dir(name: str) -> Path:
    return FIXTURES_DIR / name


def load_testbed(name: str) -> TestbedConfig:
    """Load a bundled testbed (``motivating``, ``expat``, ``patriot``, ``iotguard``)."""
    return load_config(fixture_dir(name) / CONFIG_NAME)


def load_case(testbed: str, case: str, config: TestbedConfig | None = None) -> EventSequence:
    config = config or load_testbed(testbed)
    return load_sequence(fixture_dir(testbed) / "cases" / case, config.device_map)


def load_suite(testbed: str, manifest: str = "cases.suite", config: TestbedConfig | None = None):
    config = config or load_testbed(testbed)
    return load_manifest(fixture_dir(testbed) / manifest, config.device_map)


@dataclass(frozen=True)
class ScenarioFixture:
    name: str
    testbed: str
    case: str
    expected: dict  # defense value -> outcome value
    source: str = ""

    def __post_init__(self):
        for defense, outcome in self.expected.items():
            DefenseKind(defense)
            if Outcome(outcome) is Outcome.ERRORED:
                raise ValueError(f"{self.name}: errored is not an expected outcome")


@dataclass
class FixtureResult:
    fixture: ScenarioFixture
    actual: dict
    verdicts: dict = field(default_factory=dict)

    @property
    def mismatches(self) -> dict:
        return {
            d: (want, self.actual.get(d))
            for d, want in self.fixture.expected.items()
            if self.actual.get(d) != want
        }

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def describe(self) -> str:
        if self.passed:
            return f"PASS {self.fixture.name}"
        lines = [f"FAIL {self.fixture.name}"]
        for d, (want, got) in self.mismatches.items():
            lines.append(f"  {d}: expected {want}, got {got}")
            verdict: Verdict = self.verdicts[d]
            for step in verdict.debug_trace or []:
                lines.append(f"    step {step['step']} {step['event']}: {step['diff']}")
        return "\n".join(lines)


def load_scenarios(path: Path | None = None) -> list:
    path = path or FIXTURES_DIR / "scenarios.toml"
    data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    return [
        ScenarioFixture(
            name=s["name"],
            testbed=s["testbed"],
            case=s["case"],
            expected=dict(s["expected"]),
            source=s.get("source", ""),
        )
        for s in data.get("scenario", [])
    ]


def get_scenario(name: str) -> ScenarioFixture:
    for s in load_scenarios():
        if s.name == name:
            return s
    raise KeyError(name)


def run_scenario(fixture: ScenarioFixture, defense, debug: bool = True) -> Verdict:
    config = load_testbed(fixture.testbed)
    sequence = load_case(fixture.testbed, fixture.case, config)
    pair = instantiate(config, defense)
    return run_testcase(pair, sequence, debug=debug, testcase_id=fixture.name)


def verify_fixture(fixture: ScenarioFixture) -> FixtureResult:
    """Run the scenario under every defense named in its expectation table."""
    verdicts = {d: run_scenario(fixture, d) for d in fixture.expected}
    actual = {d: v.outcome.value for d, v in verdicts.items()}
    return FixtureResult(fixture, actual, verdicts)
