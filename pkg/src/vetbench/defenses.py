"""Pluggable runtime policy-enforcement engines.

Each engine is a callable ``PdpRequest -> PdpResponse`` installed as the
platform's defense hook. Apps are instrumented with a single enforcement
point in front of their action block; a deny blocks every action of that
firing.

* ``expat``    -- simulate the contemplated actions and allow only if the
  resulting state satisfies every policy.
* ``patriot``  -- consider only policies relevant to the contemplated
  actions; action guards are checked on the current state.
* ``iotguard`` -- export the firing to a graph-based policy server and
  relay its decision.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from vetbench.iotguard import IotguardServer, ServerPolicyStore, ServerUnavailable
from vetbench.platform import ALLOW, App, PdpRequest, PdpResponse, SystemState, instrumented
from vetbench.policy import (
    ActionGuard,
    Dialect,
    GuardMode,
    NormalizedFormula,
    PolicyError,
    PolicySpec,
    StateInvariant,
    evaluate,
    guard_as_invariant,
    normalize,
    pretty,
    relevant,
)

log = logging.getLogger(__name__)


class DefenseKind(str, enum.Enum):
    EXPAT = "expat"
    PATRIOT = "patriot"
    IOTGUARD = "iotguard"
    NONE = "none"


ENGINE_KINDS = (DefenseKind.EXPAT, DefenseKind.PATRIOT, DefenseKind.IOTGUARD)

ACCEPTED_DIALECTS = {
    DefenseKind.EXPAT: (Dialect.INVARIANT, Dialect.GUARD),
    DefenseKind.PATRIOT: (Dialect.INVARIANT, Dialect.GUARD),
    DefenseKind.IOTGUARD: (Dialect.IMPLICATION, Dialect.FLOW, Dialect.GENERAL),
    DefenseKind.NONE: (),
}

# graph-only policies have no meaning outside the IoTGuard server
_GRAPH_ONLY = (Dialect.FLOW, Dialect.GENERAL)


class PolicyCompileError(PolicyError):
    pass


def select_policies(kind: DefenseKind | str, policies: Sequence[PolicySpec]) -> list:
    """Pick, for every policy id, the first statement the defense can express.

    A policy file may carry the same id in several dialects so that every
    defense enforces the same intent in its own language.
    """
    kind = DefenseKind(kind)
    if kind is DefenseKind.NONE:
        return []
    accepted = ACCEPTED_DIALECTS[kind]
    by_id: dict = {}
    for p in policies:
        by_id.setdefault(p.id, []).append(p)
    chosen = []
    for pid, variants in by_id.items():
        usable = [p for p in variants if p.dialect in accepted]
        if usable:
            chosen.append(usable[0])
        elif not all(p.dialect in _GRAPH_ONLY for p in variants):
            dialects = ", ".join(sorted({p.dialect.value for p in variants}))
            raise PolicyCompileError(f"policy {pid} ({dialects}) has no {kind.value} form")
    return chosen


def instrument(app: App, kind: DefenseKind | str) -> App:
    """Gate the app's action block behind one enforcement point.

    Trigger, condition and actions are untouched.
    """
    kind = DefenseKind(kind)
    if kind is DefenseKind.NONE:
        raise ValueError("the vanilla testbed is not instrumented")
    return instrumented(app, kind.value)


def post_state(req: PdpRequest) -> SystemState:
    state = req.state
    for action in req.actions:
        state = state.updated({action.device: action.value})
    return state


# ---------------------------------------------------------------------------
# ExPAT-like
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CompiledInvariant:
    policy_id: str
    formula: NormalizedFormula

    def __str__(self) -> str:
        return f"{self.policy_id}: {self.formula}"


def compile_expat(policies: Iterable[PolicySpec], devices: Mapping) -> list:
    """Lower invariants and guards into normalized post-state invariants."""
    compiled = []
    for p in policies:
        form = p.form
        if isinstance(form, StateInvariant):
            compiled.append(CompiledInvariant(p.id, normalize(form.expr)))
        elif isinstance(form, ActionGuard):
            target = devices[form.device].resolve(form.command)
            compiled.append(CompiledInvariant(p.id, normalize(guard_as_invariant(form, target))))
        else:
            raise PolicyCompileError(f"policy {p.id}: {p.dialect.value} is not enforceable by expat")
    return compiled


def pdf_expat(req: PdpRequest, policies: Iterable) -> PdpResponse:
    """Allow iff the post-action state satisfies every policy.

    ``policies`` holds :class:`CompiledInvariant` objects or plain
    state-invariant :class:`PolicySpec` objects.
    """
    after = post_state(req)
    failed = []
    for p in policies:
        if isinstance(p, PolicySpec):
            if not isinstance(p.form, StateInvariant):
                raise PolicyCompileError(f"compile policy {p.id} with compile_expat first")
            ok = evaluate(p.form.expr, after)
            pid = p.id
        else:
            ok = p.formula.evaluate(after)
            pid = p.policy_id
        if not ok:
            failed.append(pid)
    return PdpResponse(not failed, tuple(failed))


# ---------------------------------------------------------------------------
# PatrIoT-like
# ---------------------------------------------------------------------------


def pdf_patriot(req: PdpRequest, policies: Iterable[PolicySpec]) -> PdpResponse:
    """Allow iff no policy relevant to the contemplated actions objects.

    Guards are judged on the current state; relevant invariants on the
    candidate post-state.
    """
    failed = []
    after = None
    for p in policies:
        form = p.form
        if not any(relevant(p, a.device, style="patriot") for a in req.actions):
            continue
        if isinstance(form, ActionGuard):
            if not any(a.device == form.device and a.command == form.command for a in req.actions):
                continue
            holds = evaluate(form.guard, req.state)
            denied = holds if form.mode is GuardMode.DENY_IF else not holds
        elif isinstance(form, StateInvariant):
            if after is None:
                after = post_state(req)
            denied = not evaluate(form.expr, after)
        else:
            raise PolicyCompileError(f"policy {p.id}: {p.dialect.value} is not enforceable by patriot")
        if denied:
            failed.append(p.id)
    return PdpResponse(not failed, tuple(failed))


# ---------------------------------------------------------------------------
# IoTGuard-like
# ---------------------------------------------------------------------------


def request_message(req: PdpRequest) -> dict:
    return {
        "type": "enforce",
        "app": req.app_id,
        "event": {"device": req.trigger.device, "value": req.trigger.value},
        "actions": [
            {"device": a.device, "command": a.command, "value": a.value} for a in req.actions
        ],
        "condition": None if req.condition is None else pretty(req.condition),
    }


def pdf_iotguard(req: PdpRequest, server, fail_open: bool = True) -> PdpResponse:
    """Forward what the enforcement point can see to the policy server.

    The server only ever learns about events that fired an instrumented app.
    """
    try:
        reply = server.handle(request_message(req))
    except (ServerUnavailable, OSError) as exc:
        log.warning("policy server unreachable (%s); failing %s", exc, "open" if fail_open else "closed")
        return ALLOW if fail_open else PdpResponse(False, ("server-unreachable",))
    return PdpResponse(reply["decision"] == "allow", tuple(reply["violated_policy_ids"]))


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------


class ExpatEngine:
    kind = DefenseKind.EXPAT

    def __init__(self, policies: Sequence[PolicySpec], devices: Mapping):
        self.policies = list(policies)
        self.compiled = compile_expat(self.policies, devices)

    def __call__(self, req: PdpRequest) -> PdpResponse:
        return pdf_expat(req, self.compiled)

    def reset(self) -> None:
        pass


class PatriotEngine:
    kind = DefenseKind.PATRIOT

    def __init__(self, policies: Sequence[PolicySpec], devices: Mapping | None = None):
        for p in policies:
            if not isinstance(p.form, (StateInvariant, ActionGuard)):
                raise PolicyCompileError(f"policy {p.id}: {p.dialect.value} is not enforceable by patriot")
        self.policies = list(policies)

    def __call__(self, req: PdpRequest) -> PdpResponse:
        return pdf_patriot(req, self.policies)

    def reset(self) -> None:
        pass


class IotguardEngine:
    kind = DefenseKind.IOTGUARD

    def __init__(self, policies: Sequence[PolicySpec], devices: Mapping, fail_open: bool = True):
        self.policies = list(policies)
        try:
            store = ServerPolicyStore.from_policies(self.policies)
        except ValueError as exc:
            raise PolicyCompileError(str(exc)) from exc
        tags = {d: spec.tags for d, spec in devices.items()}
        self.server = IotguardServer(store, tags)
        self.fail_open = fail_open

    def __call__(self, req: PdpRequest) -> PdpResponse:
        return pdf_iotguard(req, self.server, self.fail_open)

    def reset(self) -> None:
        self.server.reset()


def make_engine(kind: DefenseKind | str, policies: Sequence[PolicySpec], devices: Mapping, **options):
    """Build the engine for ``kind`` from an already-selected policy list."""
    kind = DefenseKind(kind)
    if kind is DefenseKind.EXPAT:
        return ExpatEngine(policies, devices)
    if kind is DefenseKind.PATRIOT:
        return PatriotEngine(policies, devices)
    if kind is DefenseKind.IOTGUARD:
        return IotguardEngine(policies, devices, **options)
    return None
