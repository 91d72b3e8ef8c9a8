"""
Check the analytic optimum against a long seeded simulation and show the
effect of a per-slot capacity on the number of served packets.

    python3 demos/simulate.py [slots]
"""

import sys

from timely_sched import reference_preset, subgradient_search
from timely_sched import sim

T = int(sys.argv[1]) if len(sys.argv) > 1 else 10**6
system = reference_preset()

for mode in ("zero", "perfect", "imperfect"):
    sol = subgradient_search(system, mode)
    m = sim.run(system, sol, T, seed=7)
    se = m.std_errors["phi"]
    print(
        f"{mode:9s} phi*={sol.phi:.4f}  phi_sim={m.phi:.4f} +/- {m.half_widths['phi']:.4f}"
        f"  ({(m.phi - sol.phi) / se:+.2f} SE)  E_av={m.E_av:.4f}"
    )

# Truncation: at most C packets transmitted per slot; the rest are dropped.
sol = subgradient_search(system, "imperfect")
for C in (1, 2, 3):
    m = sim.run(system, sol, min(T, 2 * 10**5), seed=7, capacity=C)
    print(f"capacity {C}: phi_sim={m.phi:.4f}")
