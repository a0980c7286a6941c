"""Coverage table for the 144-scenario default catalog.

Every scenario is generated once, concretized at offsets -3.5, 0 and +3.5 m,
and simulated with the given agent. The last row counts a scenario when any
of its three runs qualifies.

    python walkthroughs/02_campaign.py [agent] [seed]

``agent`` is ``oracle`` or ``faulty:<dropout>:<latency>``, default
``faulty:0.3:0.5``.
"""

import sys
import time

from gridcover.campaign import default_jobs, report_csv, run_campaign
from gridcover.catalog import default_catalog
from gridcover.sim import EgoAgentSpec, SimConfig

agent = EgoAgentSpec.parse(sys.argv[1] if len(sys.argv) > 1 else "faulty:0.3:0.5")
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 42

t0 = time.perf_counter()
report = run_campaign(default_catalog(), agent=agent, sim_cfg=SimConfig(rng_seed=seed),
                      jobs=default_jobs())
print(f"{agent.label()}, seed {seed}, {time.perf_counter() - t0:.1f}s")
print(f"abstract traces found: {report.abstract_coverage:.0%}\n")
print(report_csv(report))
for outcome, n in report.outcome_counts().items():
    print(f"{outcome:18s} {n}")

crashes = [v for v in report.verdicts if v.outcome.value == "CoverOkPropFail"]
if crashes:
    print("\ncompliant runs with a frontal collision:")
    for v in crashes[:10]:
        print(f"  {v.scenario_id:14s} t_A={v.phase_times[0]:6.2f}  t_B={v.phase_times[1]:6.2f}  "
              f"collision {v.first_violation_t:6.2f}")
