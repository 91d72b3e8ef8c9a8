"""
Throughput as the deadline, the prediction window and the prediction quality
vary, plus the budget a non-predictive scheduler would need to match.

Each deadline point runs a budget bisection, so the whole script takes about
two minutes. Set TIMELY_SCHED_THREADS to change the number of workers.

    python3 demos/sweeps.py
"""

from timely_sched import reference_preset
from timely_sched.experiments import run_sweep

system = reference_preset()

for axis, values in (("deadline", range(2, 8)), ("window", range(0, 5))):
    print(f"{axis:>8s}  phi0      phi       equivalent B")
    for pt in run_sweep(system, axis, list(values), "imperfect"):
        print(f"{pt.value:8g}  {pt.phi0:.4f}  {pt.phi:.4f}  {pt.equivalent_budget:.3f}")

# Better detection raises throughput; more false alarms lower it.
for axis, values, base in (("p", [0.75, 0.8, 0.85, 0.9, 0.95], {"q": 0.0}), ("q", [0.05, 0.1, 0.15, 0.2, 0.25], {"p": 0.8})):
    pts = run_sweep(system.map_users(**base), axis, values, "imperfect", with_budget=False)
    print(axis, "  ".join(f"{pt.value:g}:{pt.phi:.4f}" for pt in pts))
