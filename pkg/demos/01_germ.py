# The germ is the no-load operating point every series starts from.
# Step one lets the slack voltage spread through the passive network,
# step two ramps each generator to its set point and active output.
import numpy as np

from holopf import build_ybus, bundled_case, compute_germ
from holopf.germ import germ_residuals, germ_step1

case = bundled_case("case3")
Y = build_ybus(case)

V_st = germ_step1(Y, case)
print("point A (loads and generators off):")
for b, v in zip(case.buses, V_st):
    print(f"  bus {b.id} {b.kind.value:5s} |V|={abs(v):.6f} angle={np.degrees(np.angle(v)):8.4f} deg")

g = compute_germ(case, Y)
print(f"\ngerm after {g.order} orders (last tail {g.tail:.2e}):")
for b, v in zip(case.buses, g.V0):
    print(f"  bus {b.id} |V|={abs(v):.6f} angle={np.degrees(np.angle(v)):8.4f} deg")
print("  generator Q at bus 2:", round(g.q0(case.index_of(2)) + case.bus(2).q_load, 6))

# the germ is a real power-flow solution, so the residuals are at round-off level
for k, v in germ_residuals(case, Y, g).items():
    print(f"  {k:13s} {v:.1e}")
