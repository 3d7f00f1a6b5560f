"""Talk to the graph-based policy server directly.

The server learns the home one app firing at a time. Each request adds an
event node, action nodes, and edges between them. When a policy becomes
reachable on the graph the round is denied and rolled back.
"""

from vetbench import select_policies
from vetbench.iotguard import IotguardServer, ServerPolicyStore
from vetbench.scenarios import load_testbed

config = load_testbed("iotguard")
store = ServerPolicyStore.from_policies(select_policies("iotguard", config.parsed_policies()))
tags = {d.id: d.tags for d in config.devices}
server = IotguardServer(store, tags)


def send(app, event, actions, condition=None):
    message = {
        "type": "enforce",
        "app": app,
        "event": {"device": event[0], "value": event[1]},
        "actions": [{"device": d, "command": c, "value": v} for d, c, v in actions],
        "condition": condition,
    }
    reply = server.handle(message)
    size = (server.model.graph.number_of_nodes(), server.model.graph.number_of_edges())
    print(f"{app:<14} {reply['decision']:<5} {reply['violated_policy_ids']}  graph nodes/edges = {size}")


# motion turns the light on; harmless on its own
send("LightControl", ("MotionSensor", "ACTIVE"), [("Light", "On", "ON")], "AfterSunset = ON")
# the light turning on starts the heater and crockpot; now motion reaches the crockpot
send("HeatOnLight", ("Light", "ON"), [("Heater", "On", "ON"), ("Crockpot", "On", "ON")])
# an untrusted email switches a trusted light
send("EmailLight", ("EmailSent", "ON"), [("Light", "On", "ON")])

print()
print("nodes after the denied rounds were rolled back:")
for node in sorted(server.model.nodes, key=str):
    print("   ", node)

server.handle({"type": "reset"})
print("after reset:", len(server.model.nodes), "nodes")
