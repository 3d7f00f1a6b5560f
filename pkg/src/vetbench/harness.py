"""Run testcases on a vanilla/defended pair and judge the outcome.

The comparator never looks inside the defense. It only sees the initial
state, the vanilla run's final state (the baseline) and the defended run's
final state, and reasons per device:

* baseline and defended agree            -> nothing to say about the device
* they differ, defended kept its initial -> the defense blocked something
* they differ, defended moved elsewhere  -> cannot tell (indeterminate)
"""

from __future__ import annotations

import concurrent.futures
import enum
import json
import logging
import platform as _host
import threading
import time
import tracemalloc
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Optional, Sequence

from vetbench.defenses import DefenseKind
from vetbench.events import EventSequence, TestSuite, format_event
from vetbench.platform import PlatformError, SystemState
from vetbench.policy import PolicyError
from vetbench.testbed import TestbedConfig, TestbedPair, instantiate, reset_pair

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
DEFAULT_TESTCASE_CEILING = 60.0  # seconds, wall clock


class Outcome(str, enum.Enum):
    VIOLATION = "violation"
    INDETERMINATE = "indeterminate"
    NO_VIOLATION = "no-violation"
    ERRORED = "errored"


class Mode(str, enum.Enum):
    FIDELITY = "fidelity"
    STRESS = "stress"
    DIFFERENTIAL = "differential"


COUNT_KEYS = ("violation", "indeterminate", "no-violation", "errored", "skipped")


def compare(s0: Mapping, baseline: Mapping, s_prime: Mapping) -> tuple:
    """Return ``(policy_violation, indeterminate)`` for one testcase."""
    if not (set(s0) == set(baseline) == set(s_prime)):
        raise ValueError("states range over different device sets")
    policy_violation = False
    indeterminate = False
    for device in s0:
        if baseline[device] != s_prime[device]:
            if s_prime[device] == s0[device]:
                policy_violation = True
            else:
                indeterminate = True
    return policy_violation, indeterminate


def outcome_of(policy_violation: bool, indeterminate: bool) -> Outcome:
    # indeterminate is reported first even when both flags are set
    if indeterminate:
        return Outcome.INDETERMINATE
    if policy_violation:
        return Outcome.VIOLATION
    return Outcome.NO_VIOLATION


@dataclass
class Verdict:
    testcase: str
    outcome: Outcome
    loop_detected: bool = False
    blocked_actions: list = field(default_factory=list)
    violated_policy_ids: list = field(default_factory=list)
    reason: str = ""
    events: list = field(default_factory=list)
    baseline: Optional[dict] = None
    final: Optional[dict] = None
    debug_trace: Optional[list] = None

    def to_dict(self) -> dict:
        data = {
            "testcase": self.testcase,
            "outcome": self.outcome.value,
            "loop_detected": self.loop_detected,
            "blocked_actions": list(self.blocked_actions),
            "violated_policy_ids": list(self.violated_policy_ids),
            "reason": self.reason,
            "events": list(self.events),
            "baseline": self.baseline,
            "final": self.final,
        }
        if self.debug_trace is not None:
            data["debug_trace"] = self.debug_trace
        return data


def _diff(vanilla: SystemState, defended: SystemState) -> dict:
    return {
        d: {"vanilla": vanilla[d], "defended": defended[d]}
        for d in vanilla
        if vanilla[d] != defended[d]
    }


def run_testcase(pair: TestbedPair, sequence: EventSequence, debug: bool = False,
                 testcase_id: str | None = None) -> Verdict:
    """Feed ``sequence`` to the vanilla then the defended platform and compare.

    The pair is reset before and after, so verdicts do not depend on what
    ran earlier.
    """
    name = testcase_id or sequence.name or sequence.origin
    events = [format_event(e) for e in sequence.events]
    reset_pair(pair)
    try:
        s0 = pair.vanilla.snapshot()
        vanilla_steps = []
        for event in sequence.events:
            pair.vanilla.process_event(event)
            if debug:
                vanilla_steps.append(pair.vanilla.snapshot())
        baseline = pair.vanilla.snapshot()

        defended_steps = []
        for event in sequence.events:
            pair.defended.process_event(event)
            if debug:
                defended_steps.append(pair.defended.snapshot())
        s_prime = pair.defended.snapshot()

        blocked = [r for r in pair.defended.action_log if not r.allowed]
        violated = list(dict.fromkeys(pid for r in blocked for pid in r.violated_policy_ids))
        loop = pair.vanilla.loop_detected or pair.defended.loop_detected
        policy_violation, indeterminate = compare(s0, baseline, s_prime)
        if loop:
            outcome, reason = Outcome.INDETERMINATE, "loop-detected"
        else:
            outcome, reason = outcome_of(policy_violation, indeterminate), ""
        trace = None
        if debug:
            trace = [
                {"step": i + 1, "event": events[i], "diff": _diff(v, d)}
                for i, (v, d) in enumerate(zip(vanilla_steps, defended_steps))
            ]
        return Verdict(
            testcase=name,
            outcome=outcome,
            loop_detected=loop,
            blocked_actions=[f"{r.app_id}:{r.device}.{r.command}" for r in blocked],
            violated_policy_ids=violated,
            reason=reason,
            events=events,
            baseline=baseline.to_dict(),
            final=s_prime.to_dict(),
            debug_trace=trace,
        )
    except (PlatformError, PolicyError) as exc:
        log.error("testcase %s errored: %s", name, exc)
        return Verdict(name, Outcome.ERRORED, reason=str(exc), events=events)
    finally:
        reset_pair(pair)


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


def count_outcomes(verdicts: Sequence[Verdict], size: int | None = None) -> dict:
    counts = {k: 0 for k in COUNT_KEYS}
    for v in verdicts:
        counts[v.outcome.value] += 1
    if size is not None:
        counts["skipped"] = size - len(verdicts)
    return counts


@dataclass
class SuiteResult:
    name: str
    size: int
    verdicts: dict  # defense value -> list[Verdict]
    sources: dict = field(default_factory=dict)  # defense value -> suite source

    def counts(self) -> dict:
        return {k: count_outcomes(v, self.size) for k, v in self.verdicts.items()}

    def decision_matrix(self) -> list:
        defenses = list(self.verdicts)
        rows = []
        for i in range(self.size):
            row = {"index": i}
            for d in defenses:
                vs = self.verdicts[d]
                if i < len(vs):
                    row.setdefault("testcase", vs[i].testcase)
                    row[d] = vs[i].outcome.value
                else:
                    row[d] = "skipped"
            rows.append(row)
        return rows

    def to_dict(self, mode: Mode) -> dict:
        data = {
            "name": self.name,
            "size": self.size,
            "sources": self.sources,
            "counts": self.counts(),
            "verdicts": {d: [v.to_dict() for v in vs] for d, vs in self.verdicts.items()},
        }
        if mode is Mode.DIFFERENTIAL:
            data["decision_matrix"] = self.decision_matrix()
        return data


@dataclass
class CampaignReport:
    mode: Mode
    testbed: str
    defenses: list
    suites: list
    inputs: dict = field(default_factory=dict)
    partial: bool = False
    wall_time_s: float = 0.0
    peak_memory_bytes: int = 0
    started_at: str = ""

    def totals(self) -> dict:
        totals = {d: {k: 0 for k in COUNT_KEYS} for d in self.defenses}
        for suite in self.suites:
            for d, counts in suite.counts().items():
                for k, n in counts.items():
                    totals[d][k] += n
        return totals

    @property
    def errored(self) -> int:
        return sum(t["errored"] for t in self.totals().values())

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "mode": self.mode.value,
            "testbed": self.testbed,
            "defenses": list(self.defenses),
            "inputs": self.inputs,
            "partial": self.partial,
            "totals": self.totals(),
            "suites": [s.to_dict(self.mode) for s in self.suites],
            "provenance": {
                "started_at": self.started_at,
                "host": _host.node(),
                "python": _host.python_version(),
                "wall_time_s": round(self.wall_time_s, 6),
                "peak_memory_bytes": self.peak_memory_bytes,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        lines = [f"{self.mode.value} campaign on {self.testbed}" + (" (partial)" if self.partial else "")]
        header = f"{'suite':<12}{'size':>5}  " + "  ".join(f"{d:>26}" for d in self.defenses)
        lines.append(header)
        for s in self.suites:
            counts = s.counts()
            cells = []
            for d in self.defenses:
                c = counts.get(d, {})
                cells.append(f"{c.get('violation', 0):>6}v {c.get('indeterminate', 0):>4}i "
                             f"{c.get('no-violation', 0):>4}n {c.get('errored', 0):>3}e")
            lines.append(f"{s.name:<12}{s.size:>5}  " + "  ".join(f"{c:>26}" for c in cells))
        return "\n".join(lines)


def strip_provenance(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "provenance"}


class _PairPool:
    """One testbed pair per worker thread, built lazily."""

    def __init__(self, config: TestbedConfig, defense: DefenseKind, fail_open: bool):
        self.config = config
        self.defense = defense
        self.fail_open = fail_open
        self._local = threading.local()

    def get(self) -> TestbedPair:
        pair = getattr(self._local, "pair", None)
        if pair is None:
            pair = instantiate(self.config, self.defense, fail_open=self.fail_open)
            self._local.pair = pair
        return pair


def _run_one(pool: _PairPool, seq: EventSequence, debug: bool, ceiling: float | None) -> Verdict:
    start = time.perf_counter()
    verdict = run_testcase(pool.get(), seq, debug=debug)
    if ceiling is not None and time.perf_counter() - start > ceiling:
        verdict.outcome = Outcome.ERRORED
        verdict.reason = f"exceeded per-testcase ceiling of {ceiling}s"
    return verdict


def run_campaign(
    config: TestbedConfig,
    suites,
    mode: Mode | str,
    defenses: Sequence | None = None,
    debug: bool = False,
    budget: float | None = None,
    testcase_ceiling: float | None = DEFAULT_TESTCASE_CEILING,
    workers: int = 1,
    fail_open: bool = True,
    inputs: dict | None = None,
) -> CampaignReport:
    """Run suites against one or more defenses.

    ``suites`` is either a list of :class:`TestSuite` shared by every
    defense, or a mapping ``defense -> list[TestSuite]`` (stress testing
    gives each defense its own suites). Differential mode requires at least
    two defenses and a shared list. When ``budget`` seconds elapse, the
    remaining testcases are skipped and the report is marked partial.
    """
    mode = Mode(mode)
    kinds = [DefenseKind(d) for d in (defenses or [config.defense])]
    if mode is Mode.DIFFERENTIAL:
        if len(kinds) < 2:
            raise ValueError("differential testing needs at least two defenses")
        if isinstance(suites, Mapping):
            raise ValueError("differential testing runs one shared suite list")
    if isinstance(suites, Mapping):
        per_defense = {DefenseKind(k): list(v) for k, v in suites.items()}
    else:
        per_defense = {k: list(suites) for k in kinds}
    n_suites = {len(per_defense[k]) for k in kinds}
    if len(n_suites) > 1:
        raise ValueError("every defense needs the same number of suites")
    n_suites = n_suites.pop() if n_suites else 0

    tracing = tracemalloc.is_tracing()
    if not tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    deadline = None if budget is None else t0 + budget
    partial = False

    pools = {k: _PairPool(config, k, fail_open) for k in kinds}
    results = []
    executor = concurrent.futures.ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for si in range(n_suites):
            verdicts: dict = {}
            sources: dict = {}
            size = None
            name = None
            for k in kinds:
                suite: TestSuite = per_defense[k][si]
                size = len(suite) if size is None else size
                name = name or suite.name
                if len(suite) != size:
                    raise ValueError(f"suite {si} has different sizes across defenses")
                sources[k.value] = suite.source
                done = []
                for seq in suite.sequences:
                    if deadline is not None and time.perf_counter() > deadline:
                        partial = True
                        break
                    if executor is None:
                        done.append(_run_one(pools[k], seq, debug, testcase_ceiling))
                    else:
                        done.append(executor.submit(_run_one, pools[k], seq, debug, testcase_ceiling))
                if executor is not None:
                    done = [f.result() for f in done]
                verdicts[k.value] = done
            results.append(SuiteResult(name or f"suite{si + 1}", size or 0, verdicts, sources))
    finally:
        if executor is not None:
            executor.shutdown()
        _, peak = tracemalloc.get_traced_memory()
        if not tracing:
            tracemalloc.stop()

    return CampaignReport(
        mode=mode,
        testbed=config.name,
        defenses=[k.value for k in kinds],
        suites=results,
        inputs=dict(inputs or {}),
        partial=partial,
        wall_time_s=time.perf_counter() - t0,
        peak_memory_bytes=peak,
        started_at=started_at,
    )
