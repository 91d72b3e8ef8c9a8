"""
Dual bounds from fixed-level and best-state envelopes.

With a single channel state the envelopes nearly coincide with the dual
function, so the bound gap at the optimum is a few percent. With the full
four-state channel the improvement bounds are much looser.

    python3 demos/bounds_single_state.py
"""

from timely_sched import bounds, reference_preset, subgradient_search
from timely_sched.dual import golden_section_search, price_cap
from timely_sched.model import ChannelModel

system = reference_preset()
single = system.map_users(channel=ChannelModel(states=(2.0,), transition=((1.0,),)))
cap = price_cap(single)

for mode in ("zero", "perfect", "imperfect"):
    gl = golden_section_search(lambda x: bounds.dual_bounds(single, x, mode)[0], 0.0, cap)[1]
    gu = golden_section_search(lambda x: bounds.dual_bounds(single, x, mode)[1], 0.0, cap)[1]
    phi = subgradient_search(single, mode).phi
    print(f"{mode:9s} min g_l={gl:.4f}  phi*={phi:.4f}  min g_u={gu:.4f}  gap={(gu - gl) / phi:.2%}")

print("lambda, g, g_lower, g_upper (imperfect, single state)")
for row in bounds.bound_curve(single, "imperfect", [0.0, 0.2, 0.4, 0.6, 0.8]):
    print("  " + "  ".join(f"{x:.4f}" for x in row))

for mode in ("perfect", "imperfect"):
    lo, hi = bounds.improvement_bounds_general(system, mode)
    gain = subgradient_search(system, mode).phi - subgradient_search(system, "zero").phi
    print(f"{mode:9s} gain over no prediction {gain:.4f} in [{lo:.4f}, {hi:.4f}]")
