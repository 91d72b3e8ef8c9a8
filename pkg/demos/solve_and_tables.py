"""
Solve the reference four-user instance under all three prediction modes and
print the optimal price, throughput and the policy tables of users 2 and 4.

    python3 demos/solve_and_tables.py
"""

from timely_sched import reference_preset, subgradient_search
from timely_sched.experiments import compare_tables, policy_matrix
from timely_sched.sps import table_to_csv

system = reference_preset()

for mode in ("zero", "perfect", "imperfect"):
    sol = subgradient_search(system, mode)
    print(f"{mode:9s}  lam*={sol.lam:.6f}  phi*={sol.phi:.6f}  E_av={sol.E_av:.6f}  steps={len(sol.trace)}")
    for n in (1, 3):
        print(f"  user {n + 1}")
        for line in table_to_csv(sol.policies[n], digits=4).splitlines():
            print("   ", line)
    # entries further than 0.05 away from the published tables
    for m in compare_tables(sol, mode):
        print("  differs:", m)

# Under imperfect prediction the expenditure need not decrease as the window
# opens: compare the first two columns of the state-1 row for user 2.
e = policy_matrix(subgradient_search(system, "imperfect").policies[1])
print(f"user 2, state 1: e(3+2)={e[0, 0]:.4f}  e(3+1)={e[0, 1]:.4f}")
