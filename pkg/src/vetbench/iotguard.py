"""Graph-based policy server modelled on IoTGuard's data collector and
security service.

Instrumented apps export (trigger event, contemplated actions, condition) at
their enforcement point. The server merges that into a dynamic model (a
directed graph of device attribute states) and checks its policies by
reachability on the graph. Denied rounds are rolled back.

The server speaks plain JSON-compatible dicts through :meth:`IotguardServer.handle`
so it can be moved out of process without changing behaviour::

    request  = {"type": "enforce", "app": str,
                "event": {"device": str, "value": str | int},
                "actions": [{"device": str, "command": str, "value": str | int}, ...],
                "condition": str | None}
    response = {"decision": "allow" | "deny", "violated_policy_ids": [str, ...]}

    {"type": "reset"}  ->  {"ok": True}
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional

import networkx as nx

from vetbench.policy import (
    Atom,
    CondExpr,
    General,
    Implication,
    ImplicationMode,
    PolicySpec,
    TriggerActionFlow,
    Value,
    parse_expr,
    pretty,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SOURCE_TAGS = frozenset({"untrusted", "insecure"})
SINK_TAGS = frozenset({"trusted", "secure"})
PHYSICAL_TAGS = frozenset({"trusted", "secure"})


class ServerUnavailable(RuntimeError):
    pass


class Node(NamedTuple):
    device: str
    value: Value
    kind: str  # "event" | "action"

    def __str__(self) -> str:
        return f"{self.device}={self.value} [{self.kind}]"


def node_matches(node: tuple, atom: Atom) -> bool:
    """True iff substituting the node's value into ``atom`` makes it hold."""
    device, value = node[0], node[1]
    return atom.device == device and atom.holds(value)


@dataclass(frozen=True)
class ServerPolicyStore:
    implications: tuple = ()
    flows: tuple = ()
    generals: tuple = ()

    @classmethod
    def from_policies(cls, policies: Iterable[PolicySpec]) -> "ServerPolicyStore":
        implications, flows, generals = [], [], []
        for p in policies:
            if isinstance(p.form, Implication):
                implications.append(p)
            elif isinstance(p.form, TriggerActionFlow):
                flows.append(p)
            elif isinstance(p.form, General):
                generals.append(p)
            else:
                raise ValueError(f"policy {p.id}: {p.dialect.value} is not an IoTGuard policy")
        return cls(tuple(implications), tuple(flows), tuple(generals))

    def __len__(self) -> int:
        return len(self.implications) + len(self.flows) + len(self.generals)


@dataclass
class DynamicModel:
    graph: nx.DiGraph = field(default_factory=nx.DiGraph)
    recent_nodes: set = field(default_factory=set)
    recent_edges: set = field(default_factory=set)

    def copy(self) -> "DynamicModel":
        return DynamicModel(self.graph.copy(), set(self.recent_nodes), set(self.recent_edges))

    def structure(self) -> tuple:
        """Hashable view of nodes, edges and their attributes, for comparisons."""
        nodes = frozenset((n, frozenset(d.get("tags", ()))) for n, d in self.graph.nodes(data=True))
        edges = frozenset((u, v, d.get("condition")) for u, v, d in self.graph.edges(data=True))
        return nodes, edges

    def __eq__(self, other) -> bool:
        if not isinstance(other, DynamicModel):
            return NotImplemented
        return self.structure() == other.structure()

    @property
    def nodes(self) -> set:
        return set(self.graph.nodes)

    @property
    def edges(self) -> set:
        return set(self.graph.edges)

    def _add_node(self, node: Node, tags: frozenset) -> None:
        if node not in self.graph:
            self.graph.add_node(node, tags=tags)
            self.recent_nodes.add(node)

    def _add_edge(self, u: Node, v: Node, condition: str) -> None:
        if not self.graph.has_edge(u, v):
            self.graph.add_edge(u, v, condition=condition)
            self.recent_edges.add((u, v))

    def ingest(
        self,
        event: tuple,
        actions: Iterable[tuple],
        condition: Optional[CondExpr] = None,
        tags: Mapping[str, frozenset] | None = None,
    ) -> None:
        """Merge one app firing into the model.

        ``event`` and each action are ``(device, value)`` pairs. An event
        node gets an edge to every action node, labelled with the app's
        condition. Where an action node and an event node share the same
        attribute state they are joined action -> event, which is how
        separately observed apps chain into one model.
        """
        tags = tags or {}
        label = "TRUE" if condition is None else pretty(condition)
        ev = Node(event[0], event[1], "event")
        self._add_node(ev, tags.get(ev.device, PHYSICAL_TAGS))
        produced = Node(ev.device, ev.value, "action")
        if produced in self.graph:
            self._add_edge(produced, ev, "TRUE")
        for device, value in actions:
            act = Node(device, value, "action")
            self._add_node(act, tags.get(device, PHYSICAL_TAGS))
            self._add_edge(ev, act, label)
            consumer = Node(device, value, "event")
            if consumer in self.graph:
                self._add_edge(act, consumer, "TRUE")

    def rollback(self) -> None:
        self.graph.remove_edges_from(self.recent_edges)
        self.graph.remove_nodes_from(self.recent_nodes)
        self.recent_nodes.clear()
        self.recent_edges.clear()

    def commit(self) -> None:
        self.recent_nodes.clear()
        self.recent_edges.clear()

    def reachable_from(self, sources: Iterable[Node]) -> set:
        """Nodes reachable from ``sources`` by a path of at least one edge."""
        reached: set = set()
        for s in sources:
            for succ in self.graph.successors(s):
                if succ not in reached:
                    reached.add(succ)
                    reached |= nx.descendants(self.graph, succ)
        return reached

    def has_path(self, sources: Iterable[Node], targets: Iterable[Node]) -> bool:
        targets = set(targets)
        return bool(targets) and not self.reachable_from(sources).isdisjoint(targets)

    def recent_cycle(self) -> bool:
        """Whether some edge added this round closes a cycle."""
        return any(u == v or nx.has_path(self.graph, v, u) for u, v in self.recent_edges)


def enforce(model: DynamicModel, store: ServerPolicyStore) -> tuple:
    """Check every policy against the model; return violated policy ids.

    Rolls back the round on violation and commits it otherwise.
    """
    violated = []
    nodes = list(model.graph.nodes)
    for policy in store.implications:
        form = policy.form
        if form.mode is not ImplicationMode.RESTRICT:
            continue
        sources = [n for n in nodes if any(node_matches(n, a) for a in form.premise)]
        targets = [n for n in nodes if any(node_matches(n, a) for a in form.conclusion)]
        if sources and model.has_path(sources, targets):
            violated.append(policy.id)
    if store.flows:
        sources = [n for n in nodes if model.graph.nodes[n]["tags"] & SOURCE_TAGS]
        targets = [n for n in nodes if model.graph.nodes[n]["tags"] & SINK_TAGS]
        if sources and model.has_path(sources, targets):
            violated.extend(p.id for p in store.flows)
    for policy in store.generals:
        if policy.form.check == "no-cycle" and model.recent_cycle():
            violated.append(policy.id)
    if violated:
        model.rollback()
    else:
        model.commit()
    return tuple(violated)


class IotguardServer:
    """Owns one dynamic model and one immutable policy store."""

    def __init__(self, store: ServerPolicyStore, device_tags: Mapping[str, frozenset] | None = None):
        self.store = store
        self.device_tags = dict(device_tags or {})
        self.model = DynamicModel()
        self.alive = True
        self.requests_seen = 0

    def reset(self) -> None:
        self.model = DynamicModel()
        self.requests_seen = 0

    def shutdown(self) -> None:
        self.alive = False

    def enforce_request(self, event: tuple, actions: list, condition: Optional[CondExpr]) -> tuple:
        """Ingest and enforce atomically; returns violated policy ids."""
        self.requests_seen += 1
        self.model.ingest(event, actions, condition, self.device_tags)
        violated = enforce(self.model, self.store)
        if violated:
            log.debug("deny %s -> %s: %s", event, actions, violated)
        return violated

    def handle(self, message: Mapping) -> dict:
        if not self.alive:
            raise ServerUnavailable("policy server is down")
        kind = message.get("type")
        if kind == "reset":
            self.reset()
            return {"ok": True}
        if kind != "enforce":
            raise ValueError(f"unknown message type {kind!r}")
        event = message["event"]
        actions = [(a["device"], a["value"]) for a in message["actions"]]
        condition_text = message.get("condition")
        condition = parse_expr(condition_text) if condition_text else None
        violated = self.enforce_request((event["device"], event["value"]), actions, condition)
        return {
            "decision": "deny" if violated else "allow",
            "violated_policy_ids": list(violated),
        }
