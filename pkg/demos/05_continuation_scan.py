# One grouped scale turns the artifact into a fast continuation scan.
# Past the nose the series stops meaning anything; the residual says so.
import numpy as np

from holopf import ScaleAssignment, bundled_case, nr_solve, run
from holopf.mdhem import scaled_injections

case = bundled_case("case4")
scales = ScaleAssignment.single(case)
art = run(case, scales, M_max=30, tol=1e-12)
print(f"order {art.M}, tails {art.tails[0]:.1e} ... {art.tails[-1]:.1e}")

print(" scale   |V3| series  |V3| N-R     residual")
for lam in np.round(np.arange(0, 5.01, 0.5), 2):
    ev = art.evaluate([lam])
    nr = nr_solve(case, scaled_injections(case, scales, [lam]))
    ref = f"{nr.vm[2]:.6f}" if nr.converged else "diverged"
    print(f"{lam:6.2f}   {abs(ev.V[2]):.6f}     {ref:10s}  {ev.residual:.1e}")
