"""Writing scenarios in the catalog language, and what the search makes of them.

Cells are numbered around the ego:

    1 2 3      front  (left, same lane, right)
    4 . 5      beside
    6 7 8      behind
"""

from gridcover.catalog import DslSyntaxError, parse_scenario_dsl
from gridcover.model import ABSTRACT_BOUNDS
from gridcover.search import SearchConfig, find_witness

TEXT = """\
# both cars ahead, then both behind
overtake_both : reach { car1@2, car2@3 } then { car1@7, car2@8 }
scenario swap : reach { car1@1, car2@3 } then { car1@3, car2@1 }
scenario cut_in : reach { car1@4, car2@5 } then { car1@2, car2@5 }
"""

# the keyword is required; this shows what a mistake looks like
try:
    parse_scenario_dsl(TEXT)
except DslSyntaxError as e:
    print(f"line {e.lineno}, column {e.offset}: {e.msg_only}")

catalog = parse_scenario_dsl(TEXT.replace("overtake_both", "scenario overtake_both"))
for spec in catalog:
    out = find_witness(spec)
    if not out:
        print(f"{spec.id:15s} no witness ({out.reason}, {out.expanded} nodes)")
        continue
    obs = out.observations(ABSTRACT_BOUNDS)
    a, b = obs[out.phase1_index], obs[out.phase2_index]
    print(f"{spec.id:15s} {len(out):2d} steps; at A car1 {sorted(c.name for c in a[0])}, "
          f"at B car1 {sorted(c.name for c in b[0])}")

# a shorter horizon can make a scenario unreachable
short = find_witness(catalog.by_id("swap"), cfg=SearchConfig(max_steps=3))
print(f"swap within 3 steps: {bool(short)} ({getattr(short, 'reason', 'found')})")
