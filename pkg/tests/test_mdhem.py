from dataclasses import replace

import numpy as np
import pytest

from holopf.embedding import unpack
from holopf.germ import compute_germ
from holopf.mdhem import (
    LimitLoopError, ScaleAssignment, _layout, _pq_terms, _rhs_block, assemble_lhs,
    check_q_limits, estimate_resources, evaluate_artifact, rhs_for_index, run,
    scaled_injections, solve_with_limits,
)
from holopf.mpseries import MPSeries, truncated_product
from holopf.network import BusKind, CaseError, build_ybus, case_from_dict
from holopf.nr_oracle import NRConfig, grid_points, nr_solve


def flow_residual(art, s):
    """Worst power-flow mismatch of the evaluated series, from V and Y only."""
    case = art.case
    V = art.evaluate(s).V
    S = V * np.conj(art.ybus.Y @ V)
    spec = scaled_injections(case, art.scales, s)
    worst = 0.0
    for i, b in enumerate(case.buses):
        if b.kind is BusKind.PQ:
            worst = max(worst, abs(S[i] - spec[i]))
        elif b.kind is BusKind.PV:
            worst = max(worst, abs(S[i].real - spec[i].real), abs(abs(V[i]) - b.v_setpoint))
    return worst


# --- scale assignment -------------------------------------------------------

def test_presets(case4, ieee14):
    pb = ScaleAssignment.per_bus(case4)
    assert pb.D == 2 and pb.p_map == {2: 0, 3: 1} and pb.q_map == {2: 0, 3: 1}
    assert ScaleAssignment.single(case4).D == 1
    areas = ScaleAssignment.from_areas(ieee14)
    assert areas.D == 4
    areas.validate(ieee14)


def test_mapping_forms(case4):
    sc = ScaleAssignment.from_mapping({"p": [[2, "P"], [3, "P"]], "q": [[2, "Q"], [3, "q"]]})
    sc.validate(case4)
    assert sc.p_map == {2: 0, 3: 0} and sc.q_map == {2: 1, 3: 1}
    assert ScaleAssignment.from_mapping(sc.to_dict()) == sc
    assert sc.digest() != ScaleAssignment.per_bus(case4).digest()


@pytest.mark.parametrize("mapping,msg", [
    ({"a": [2]}, "bus 3"),
    ({"a": [2, 3], "b": []}, "control nothing"),
    ({"a": [2, 3, 4]}, "not a scalable"),
    ({"a": [2, 3, 9]}, "unknown bus"),
    ({"a": [2, 3], "b": [[2, "P"]]}, "twice"),
])
def test_invalid_assignments(case4, mapping, msg):
    with pytest.raises(CaseError, match=msg):
        ScaleAssignment.from_mapping(mapping).validate(case4)


def test_bad_target_kind():
    with pytest.raises(CaseError):
        ScaleAssignment.from_mapping({"a": [[2, "X"]]})


# --- system matrix ----------------------------------------------------------

def test_lhs_dimensions(case3, case4, ieee14):
    for case in (case3, case4, ieee14):
        s, p, v = case.counts()
        A, layout = assemble_lhs(case, build_ybus(case), compute_germ(case))
        assert A.shape == (2 * s + 2 * p + 5 * v,) * 2
    assert assemble_lhs(case3, build_ybus(case3), compute_germ(case3))[0].shape == (9, 9)


def test_lhs_without_pv():
    doc = {"buses": [{"id": 1, "kind": "slack", "v_setpoint": 1.0},
                     {"id": 2, "kind": "pq", "p_load": 0.5}],
           "branches": [{"from": 1, "to": 2, "r": 0.01, "x": 0.1}]}
    case = case_from_dict(doc)
    A, _ = assemble_lhs(case, build_ybus(case), compute_germ(case))
    assert A.shape == (4, 4)


def test_lhs_converted_bus_adds_two(case4):
    conv = case4.convert_pv_to_pq(4, 0.5)
    A, layout = assemble_lhs(conv, build_ybus(conv), compute_germ(conv))
    assert A.shape == (2 * 4 + 2, 2 * 4 + 2)
    assert layout.aug == (3,)


def test_lhs_deterministic(case4):
    Y, g = build_ybus(case4), compute_germ(case4)
    assert assemble_lhs(case4, Y, g)[0].tobytes() == assemble_lhs(case4, Y, g)[0].tobytes()


# --- right-hand side --------------------------------------------------------

def test_rhs_reference_matches_block(art4):
    case, iset = art4.case, art4.index_set
    layout = _layout(case)
    terms = _pq_terms(case, art4.scales)
    for m in range(1, art4.M + 1):
        block = _rhs_block(case, layout, terms, iset, art4.V, art4.W, art4.Q, m)
        sl = iset.degree_slice(m)
        for j, n in enumerate(iset.indices[sl]):
            ref = rhs_for_index(art4, n)
            assert np.max(np.abs(ref - block[:, j])) <= 1e-13 * max(1.0, np.max(np.abs(ref)))


def test_rhs_reproduces_coefficients(art4):
    A, layout = assemble_lhs(art4.case, art4.ybus, art4.germ)
    iset = art4.index_set
    for n in [(1, 0), (0, 1), (2, 1), (3, 3), (0, 7)]:
        V, W, Q = unpack(layout, np.linalg.solve(A, rhs_for_index(art4, n)))
        r = iset.rank(n)
        assert np.allclose(V[:, 0], art4.V[:, r], atol=1e-13, rtol=1e-9)
        assert np.allclose(Q[:, 0], art4.Q[:, r], atol=1e-13, rtol=1e-9)


def test_rhs_first_order_single_term(case4):
    sc = ScaleAssignment.from_mapping({"p2": [[2, "P"]], "rest": [[2, "Q"], 3]})
    art = run(case4, sc, M_max=1, tol=0)
    rhs = rhs_for_index(art, (1, 0))
    i = case4.index_of(2)
    expected = case4.bus(2).p_injection * np.conj(art.germ.W0[i])
    nz = np.flatnonzero(rhs)
    assert set(nz) <= {2 * i, 2 * i + 1}
    assert rhs[2 * i] == pytest.approx(expected.real, abs=1e-15)
    assert rhs[2 * i + 1] == pytest.approx(expected.imag, abs=1e-15)


def test_rhs_rejects_order_zero(art4):
    with pytest.raises(ValueError):
        rhs_for_index(art4, (0, 0))


def test_truncation_residual_order(case4):
    # the evaluated series solves the flow equations up to terms of degree M + 1
    M = 3
    art = run(case4, ScaleAssignment.per_bus(case4), M_max=M, tol=0)
    d = np.array([0.7, 1.3])
    r1 = flow_residual(art, 0.02 * d)
    r2 = flow_residual(art, 0.01 * d)
    assert r1 / r2 == pytest.approx(2 ** (M + 1), rel=0.15)


# --- artifact invariants ----------------------------------------------------

def test_germ_anchoring(art4):
    g = art4.germ
    assert art4.V[:, 0].tobytes() == g.V0.tobytes()
    assert art4.W[:, 0].tobytes() == g.W0.tobytes()
    assert art4.Q[:, 0].tobytes() == g.Q0.tobytes()


def check_reciprocal(art):
    unit = np.zeros(len(art.index_set))
    unit[0] = 1
    for i in range(art.case.n_bus):
        V = MPSeries(art.index_set, art.V[i])
        W = MPSeries(art.index_set, art.W[i])
        assert np.max(np.abs(truncated_product(W, V).coeffs - unit)) <= 1e-12


def test_reciprocal_consistency(art4, case4_qlim, ieee14):
    check_reciprocal(art4)
    conv, _ = solve_with_limits(case4_qlim, ScaleAssignment.per_bus(case4_qlim), [1.5, 1.5])
    check_reciprocal(conv)
    check_reciprocal(run(ieee14, ScaleAssignment.from_areas(ieee14), M_max=6))


def test_q_series_real(art4):
    assert art4.Q.dtype == np.float64
    for j in range(len(art4.pv)):
        MPSeries(art4.index_set, art4.Q[j], real=True)


def test_series_accessors(art4, case4):
    assert art4.v_series(2)[(0, 0)] == art4.V[1, 0]
    assert art4.q_series(4)[(1, 1)] == art4.Q[0, art4.index_set.rank((1, 1))]
    with pytest.raises(KeyError):
        art4.q_series(2)


def test_stops_on_tolerance(art4_default):
    assert art4_default.tails[-1] < 1e-8
    assert art4_default.M <= 12
    assert len(art4_default.index_set) == len(art4_default.V[0])


def test_germ_only(case4):
    art = run(case4, ScaleAssignment.per_bus(case4), M_max=0)
    assert art.M == 0 and art.V.shape == (4, 1)
    assert np.array_equal(art.evaluate([1.3, 0.2]).V, art.germ.V0)


def test_zero_load_scale_gives_constant_series():
    doc = {"buses": [{"id": 1, "kind": "slack", "v_setpoint": 1.0},
                     {"id": 2, "kind": "pq"},
                     {"id": 3, "kind": "pv", "v_setpoint": 1.01, "p_gen": 0.3}],
           "branches": [{"from": 1, "to": 2, "r": 0.01, "x": 0.1},
                        {"from": 2, "to": 3, "r": 0.01, "x": 0.1}]}
    case = case_from_dict(doc)
    art = run(case, ScaleAssignment.from_mapping({"z": [2]}), M_max=5, tol=0)
    assert np.all(art.V[:, 1:] == 0) and np.all(art.Q[:, 1:] == 0)


def test_evaluate_at_zero_is_germ(art4):
    ev = evaluate_artifact(art4, [0, 0])
    assert ev.V.tobytes() == art4.germ.V0.tobytes()


def test_evaluate_base_matches_nr(art4, case4):
    ev = art4.evaluate([1, 1])
    nr = nr_solve(case4)
    assert np.max(np.abs(ev.V - nr.V)) <= 1e-6
    assert ev.q_gen[4] == pytest.approx(nr.q_gen[4], abs=1e-6)
    # stored injections agree with a fresh computation from V and Y
    assert np.max(np.abs(ev.S - ev.V * np.conj(art4.ybus.Y @ ev.V))) <= 1e-9


def test_evaluate_far_outside(art4):
    ev = art4.evaluate([40, 40])
    assert ev.residual > 1.0


def test_residual_decay(case4):
    sc = ScaleAssignment.per_bus(case4)
    res = [run(case4, sc, M_max=M, tol=0).evaluate([1.2, 0.8]).residual for M in (4, 8, 12)]
    assert res[1] <= 10 * res[0] and res[2] <= 10 * res[1]
    assert res[2] < res[0]


def test_dimension_collapse(case4):
    a2 = run(case4, ScaleAssignment.per_bus(case4), M_max=12, tol=0)
    a1 = run(case4, ScaleAssignment.single(case4), M_max=12, tol=0)
    for sig in (0.0, 0.5, 1.0):
        assert np.max(np.abs(a2.evaluate([sig, sig]).V - a1.evaluate([sig]).V)) <= 1e-8


def test_growth_warning(case4):
    heavy = case_from_dict({**case4.to_dict(), "buses": [
        {**b, "p_load": 6 * b.get("p_load", 0), "q_load": 6 * b.get("q_load", 0)}
        if b["kind"] == "pq" else b for b in case4.to_dict()["buses"]]})
    sc = ScaleAssignment.single(heavy)
    art = run(heavy, sc, M_max=12, tol=0)
    assert any("grew" in w for w in art.warnings)


# --- reactive limits --------------------------------------------------------

def test_no_violations_at_zero(case4_qlim):
    art = run(case4_qlim, ScaleAssignment.per_bus(case4_qlim))
    assert check_q_limits(art, [0, 0]) == []


def test_infinite_limits_never_violate(art4):
    for s in grid_points([(0, 2, 0.5), (0, 2, 0.5)]):
        assert check_q_limits(art4, s) == []


def test_upper_limit_flag_matches_nr(case4_qlim):
    sc = ScaleAssignment.per_bus(case4_qlim)
    art = run(case4_qlim, sc)
    viol = check_q_limits(art, [1.5, 1.5])
    assert [(v.bus, v.side) for v in viol] == [(4, "max")]
    nr = nr_solve(case4_qlim, scaled_injections(case4_qlim, sc, [1.5, 1.5]),
                  NRConfig(enforce_q_limits=True))
    assert [(b, side) for b, side, _ in nr.switched] == [(4, "max")]


def test_single_pass_without_violation(case4):
    art, log = solve_with_limits(case4, ScaleAssignment.per_bus(case4), [1.5, 1.5])
    assert log == [] and art.passes == 1 and art.conversions == ()


def test_one_conversion_matches_nr(case4_qlim):
    sc = ScaleAssignment.per_bus(case4_qlim)
    art, log = solve_with_limits(case4_qlim, sc, [1.5, 1.5])
    assert [(c["bus"], c["side"], c["stage"]) for c in log] == [(4, "max", "target")]
    assert art.passes == 2
    assert art.case.bus(4).kind is BusKind.PQ and art.case.bus(4).q_fixed == 1.0
    nr = nr_solve(case4_qlim, scaled_injections(case4_qlim, sc, [1.5, 1.5]),
                  NRConfig(enforce_q_limits=True))
    assert np.max(np.abs(art.evaluate([1.5, 1.5]).V - nr.V)) <= 1e-5
    assert art.source_digest == case4_qlim.digest()


def test_germ_violation_converted_first(case4):
    buses = tuple(replace(b, q_min=-0.5) if b.id == 4 else b for b in case4.buses)
    case = replace(case4, buses=buses)
    art, log = solve_with_limits(case, ScaleAssignment.per_bus(case), [1.0, 1.0])
    assert log[0]["stage"] == "germ" and log[0]["side"] == "min" and log[0]["pass"] == 0
    assert art.passes == 1


def test_limit_loop_cap(case4_qlim):
    with pytest.raises(LimitLoopError) as exc:
        solve_with_limits(case4_qlim, ScaleAssignment.per_bus(case4_qlim), [1.5, 1.5],
                          max_conversions=0)
    assert exc.value.conversions == []


# --- resources --------------------------------------------------------------

def test_resource_examples():
    r = estimate_resources(1, 12, 1, 2, 1)
    assert (r.lhs_dim, r.columns_per_order, r.terms_per_series) == (11, 1, 13)
    r = estimate_resources(4, 11, 1, 9, 4)
    assert (r.columns_per_order, r.terms_per_series) == (364, 1365)
    assert estimate_resources(2, 12, 1, 2, 1).conv_multiplies == 7800
    assert estimate_resources(2, 12, 1, 2, 1).lhs_bytes == 11 * 11 * 8
    assert not r.saturated


def test_resource_saturation():
    r = estimate_resources(60, 60, 1, 100, 100)
    assert r.saturated and r.terms_per_series == 2**63 - 1
    with pytest.raises(ValueError):
        estimate_resources(0, 3, 1, 1, 1)
