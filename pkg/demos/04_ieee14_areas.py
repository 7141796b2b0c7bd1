# Four area scales on the IEEE 14-bus system.
import time

import numpy as np

from holopf import ScaleAssignment, bundled_case, estimate_resources, nr_solve, run

case = bundled_case("ieee14")
scales = ScaleAssignment.from_areas(case)
print("areas:", {n: list(b) for n, b in case.areas.items()})

s_, p_, v_ = case.counts()
rep = estimate_resources(4, 11, s_, p_, v_)
print(f"order 11: {rep.terms_per_series} terms per series, system size {rep.lhs_dim}, "
      f"~{rep.conv_multiplies:,} multiplies per order")

t0 = time.perf_counter()
art = run(case, scales, M_max=11, tol=1e-8)
print(f"solved to order {art.M} in {time.perf_counter() - t0:.2f} s, last tail {art.tails[-1]:.1e}")

nr = nr_solve(case)
print(f"base point vs N-R: {np.max(np.abs(art.evaluate([1, 1, 1, 1]).V - nr.V)):.1e} pu")

# |V5| as area 1 and area 2 loading rise, other areas at base
i5 = case.index_of(5)
grid = np.round(np.arange(0, 2.01, 0.25), 2)
vm = np.array([[abs(art.evaluate([a, b, 1, 1]).V[i5]) for b in grid] for a in grid])
print("|V5|, rows s1, cols s2:")
print(np.round(vm, 4))
