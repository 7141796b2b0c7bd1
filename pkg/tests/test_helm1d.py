import time

import numpy as np
import pytest

from holopf.helm1d import helm_solve
from holopf.mdhem import ScaleAssignment, run
from holopf.mpseries import MPSeries, conj_coeffs, get_index_set, truncated_product
from holopf.network import case_from_dict
from holopf.nr_oracle import nr_solve


@pytest.mark.parametrize("name,bound", [("case3", 1e-8), ("case4", 1e-8), ("ieee14", 1e-6)])
def test_matches_nr(request, name, bound):
    case = request.getfixturevalue(name)
    t0 = time.perf_counter()
    sol = helm_solve(case, n_max=30)
    elapsed = time.perf_counter() - t0
    nr = nr_solve(case)
    assert sol.converged and nr.converged
    V = sol.V(1.0)
    assert np.max(np.abs(V.real - nr.V.real)) <= bound
    assert np.max(np.abs(V.imag - nr.V.imag)) <= bound
    assert elapsed < 5.0


def test_flat_germ_and_slack_series(ieee14):
    sol = helm_solve(ieee14)
    assert np.all(sol.V_series[:, 0] == 1.0)
    sl = ieee14.slack
    b = ieee14.buses[sl]
    assert sol.V_series[sl, 1] == pytest.approx(b.v_setpoint * np.exp(1j * b.v_angle) - 1)
    assert np.all(sol.V_series[sl, 2:] == 0)


def test_trivial_case_constant():
    doc = {
        "buses": [{"id": 1, "kind": "slack", "v_setpoint": 1.0},
                  {"id": 2, "kind": "pq"},
                  {"id": 3, "kind": "pv", "v_setpoint": 1.0}],
        "branches": [{"from": 1, "to": 2, "r": 0.01, "x": 0.1},
                     {"from": 2, "to": 3, "r": 0.01, "x": 0.1}],
    }
    sol = helm_solve(case_from_dict(doc))
    assert sol.converged
    assert np.max(np.abs(sol.V_series[:, 1:]), initial=0) <= 1e-15
    assert np.allclose(sol.V(1.0), 1.0)


def test_reciprocal_and_magnitude(ieee14):
    sol = helm_solve(ieee14)
    iset = get_index_set(1, sol.order)
    unit = np.zeros(sol.order + 1)
    unit[0] = 1
    for k in range(ieee14.n_bus):
        V = MPSeries(iset, sol.V_series[k])
        W = MPSeries(iset, sol.W_series[k])
        prod = truncated_product(conj_coeffs(W), conj_coeffs(V))
        assert np.max(np.abs(prod.coeffs - unit)) <= 1e-12
    V1 = sol.V(1.0)
    for i in ieee14.pv:
        assert abs(abs(V1[i]) - ieee14.buses[i].v_setpoint) <= 1e-6


def test_agrees_with_single_scale_mdhem(case4, ieee14):
    for case in (case4, ieee14):
        art = run(case, ScaleAssignment.single(case), M_max=30, tol=1e-12)
        sol = helm_solve(case, n_max=30)
        assert np.max(np.abs(art.evaluate([1.0]).V - sol.V(1.0))) <= 1e-6


def test_nonconvergence_reported(case4):
    heavy = case_from_dict({**case4.to_dict(), "buses": [
        {**b, "p_load": 8 * b.get("p_load", 0), "q_load": 8 * b.get("q_load", 0)}
        if b["kind"] == "pq" else b for b in case4.to_dict()["buses"]]})
    sol = helm_solve(heavy, n_max=30)
    assert not sol.converged
    assert "convergence region" in sol.message
