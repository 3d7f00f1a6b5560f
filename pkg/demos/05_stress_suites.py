"""Random stress campaign, reproducible from a seed.

Generates the six suites (5 to 50 testcases, 1 to 15 events each) against
the shared home and runs every defense on them. Running it twice with the
same seed prints the same table.
"""

import sys

from vetbench import Mode, gen_stress_suites, run_campaign
from vetbench.scenarios import load_testbed

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 42
config = load_testbed("expat")

for defense in ("expat", "patriot", "iotguard"):
    suites = gen_stress_suites(config, seed=seed)
    report = run_campaign(config, suites, Mode.STRESS, [defense])
    print(report.summary())
    prov = report.to_dict()["provenance"]
    print(f"wall time {prov['wall_time_s']:.3f}s, peak memory {prov['peak_memory_bytes'] / 1024:.0f} KiB")
    print()

sample = gen_stress_suites(config, seed=seed)[0].sequences[0]
print(f"first generated testcase ({sample.name}):")
print(sample.to_text())
