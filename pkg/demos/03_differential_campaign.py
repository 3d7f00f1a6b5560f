"""Same suite, three defenses, one table.

Runs the shipped case suite of the shared home through every defense and
prints the decision matrix. Rows where the defenses disagree are the
interesting ones. The physical_window case shows a false alarm: a person
opens the window by hand, and the comparator cannot tell that apart from
a blocked app.
"""

from vetbench import Mode, run_campaign
from vetbench.scenarios import load_suite, load_testbed

config = load_testbed("expat")
suite = load_suite("expat", config=config)
report = run_campaign(config, [suite], Mode.DIFFERENTIAL, ["expat", "patriot", "iotguard"])

print(report.summary())
print()

(data,) = report.to_dict()["suites"]
width = max(len(row["testcase"]) for row in data["decision_matrix"])
for row in data["decision_matrix"]:
    cells = [row[d] for d in report.defenses]
    mark = "  <- disagree" if len(set(cells)) > 1 else ""
    print(f"{row['testcase']:<{width}}  " + "  ".join(f"{c:>13}" for c in cells) + mark)

totals = report.totals()
print()
print("violations:", {d: totals[d]["violation"] for d in report.defenses})
