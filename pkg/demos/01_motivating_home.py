"""A motion sensor opens the front door: who stops it when nobody is home?

The home has one app (R1: motion -> open the door) and one policy (P1: do
not open the door in away mode). We replay "leave home, then motion" on a
vanilla platform and on each defended one, then ask the comparator what
happened.
"""

from vetbench import instantiate, run_testcase
from vetbench.scenarios import load_case, load_testbed

config = load_testbed("motivating")
sequence = load_case("motivating", "home_away.events", config)

print("events:", ", ".join(sequence.to_text().split("\n")).strip(", "))
print("initial:", dict(instantiate(config, "none").vanilla.initial_state()))
print()

for defense in ("expat", "patriot", "iotguard"):
    verdict = run_testcase(instantiate(config, defense), sequence, debug=True)
    print(f"{defense:>9}: {verdict.outcome.value}")
    print(f"           baseline door = {verdict.baseline['FrontDoor']}, defended door = {verdict.final['FrontDoor']}")
    if verdict.blocked_actions:
        print(f"           blocked {verdict.blocked_actions} citing {verdict.violated_policy_ids}")
    for step in verdict.debug_trace:
        if step["diff"]:
            print(f"           diverged at step {step['step']}: {step['diff']}")

# The graph-based server only sees a single motion -> door edge. Its policy
# talks about HomeMode, which never reaches the server because no app
# reacts to it, so the door opens.
