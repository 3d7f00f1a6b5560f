"""Three ways the defenses disagree on the same shared home.

type1  smoke then a water leak. The leak app closes the water valve, which
       the sprinkler needs. The graph server never heard about the smoke.
type2  the TV is on and the window is open for air, the heater and AC get
       involved. A post-state checker refuses to turn the TV off because
       some unrelated invariant is already broken.
type3  two apps that never trigger each other. Only a checker that looks
       at the whole state sees the problem.
"""

from vetbench import instantiate, run_testcase
from vetbench.scenarios import get_scenario, load_case, load_testbed, verify_fixture

config = load_testbed("expat")
defenses = ("expat", "patriot", "iotguard")

print(f"{'case':<28}" + "".join(f"{d:>16}" for d in defenses))
for case in ("type1_smoke_then_leak", "type2_policy_selection", "type3_unlinked_apps"):
    sequence = load_case("expat", f"{case}.events", config)
    row = []
    for d in defenses:
        verdict = run_testcase(instantiate(config, d), sequence)
        row.append(verdict.outcome.value)
    print(f"{case:<28}" + "".join(f"{cell:>16}" for cell in row))

print()
for name in ("type1", "type2", "type3"):
    result = verify_fixture(get_scenario(name))
    print(result.describe().splitlines()[0])
    for d, verdict in sorted(result.verdicts.items()):
        if verdict.blocked_actions:
            print(f"    {d} blocked {', '.join(verdict.blocked_actions)}")
