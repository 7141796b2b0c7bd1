# Where does the generator at bus 4 hit its reactive ceiling?
# The Q series answers that for every point at once; the limit loop then
# rebuilds the series with the bus held at its limit.
import numpy as np

from holopf import NRConfig, ScaleAssignment, bundled_case, nr_solve, run, solve_with_limits
from holopf.mdhem import scaled_injections

case = bundled_case("case4_qlim")       # bus 4 limited to |Q| <= 1.0 pu
scales = ScaleAssignment.per_bus(case)
art = run(case, scales)

s = np.round(np.arange(0, 2.01, 0.25), 2)
q = np.array([[art.evaluate([a, b]).q_gen[4] for b in s] for a in s])
print("generator Q at bus 4 (rows s1, cols s2):")
print(np.round(q, 3))
over = q > case.bus(4).q_max
print("points above q_max:", int(over.sum()), "of", over.size)

target = [1.5, 1.5]
fixed, log = solve_with_limits(case, scales, target)
for c in log:
    print(f"pass {c['pass']}: bus {c['bus']} at q_{c['side']} ({c['q_gen']:.4f} -> {c['limit']})")

nr = nr_solve(case, scaled_injections(case, scales, target), NRConfig(enforce_q_limits=True))
ev = fixed.evaluate(target)
print("|V| series :", np.round(np.abs(ev.V), 6))
print("|V| N-R    :", np.round(nr.vm, 6))
print(f"max difference {np.max(np.abs(ev.V - nr.V)):.2e} pu, bus 4 now at {abs(ev.V[3]):.4f} pu")
