"""Command-line interface: ``holopf {germ,solve,eval,sweep,compare,limits,info,helm}``.

Exit codes: 0 success, 2 parse/validation error, 3 germ failure,
4 divergence warning or non-convergence, 5 limit-loop cap reached.
``HOLOPF_THREADS`` sets the worker count for ``compare``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import artifact_io
from .germ import GermError, compute_germ, germ_residuals
from .helm1d import helm_solve
from .mdhem import (
    LimitLoopError, MDHEMError, ScaleAssignment, check_q_limits, estimate_resources, run,
    solve_with_limits,
)
from .network import BUNDLED, CaseError, build_ybus, bundled_case, load_case
from .nr_oracle import NRConfig, grid_points, nr_grid_compare

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GERM = 3
EXIT_DIVERGENCE = 4
EXIT_LIMIT_LOOP = 5


def _f(x: float) -> str:
    return format(float(x), ".17g")


def _open_case(spec: str):
    path = Path(spec)
    if not path.exists() and spec in BUNDLED:
        return bundled_case(spec)
    return load_case(path)


def _scales(case, spec: str | None, dims: int | None) -> ScaleAssignment:
    if dims == 1:
        return ScaleAssignment.single(case)
    if spec is None or spec == "per-bus":
        return ScaleAssignment.per_bus(case)
    if spec == "single":
        return ScaleAssignment.single(case)
    if spec == "areas":
        return ScaleAssignment.from_areas(case)
    text = spec if spec.lstrip().startswith("{") else Path(spec).read_text()
    try:
        mapping = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"--scales: JSON parse error: {exc.msg}") from None
    return ScaleAssignment.from_mapping(mapping)


def _point(text: str, D: int) -> np.ndarray:
    vals = [float(v) for v in text.split(",")]
    if len(vals) == 1 and D > 1:
        vals = vals * D
    if len(vals) != D:
        raise CaseError(f"expected {D} scale values, got {len(vals)}")
    return np.array(vals)


def _grid(text: str, D: int) -> np.ndarray:
    axes = []
    for part in text.split(","):
        try:
            lo, hi, step = (float(v) for v in part.split(":"))
        except ValueError:
            raise CaseError(f"--grid axis {part!r}: expected lo:hi:step") from None
        if not step > 0:
            raise CaseError("--grid step must be positive")
        axes.append((lo, hi, step))
    if len(axes) == 1 and D > 1:
        axes = axes * D
    if len(axes) != D:
        raise CaseError(f"--grid has {len(axes)} axes, artifact has {D} dimensions")
    return grid_points(axes)


def _writer(out: str | None):
    if out is None:
        return sys.stdout, False
    return open(out, "w", newline=""), True


def _solution_header(art) -> list[str]:
    case = art.case
    cols = list(art.scales.names)
    for b in case.buses:
        cols += [f"vm_{b.id}", f"va_{b.id}"]
    cols += [f"q_{case.buses[i].id}" for i in art.pv]
    return cols + ["residual"]


def _solution_row(art, s, sol) -> list[str]:
    row = [_f(v) for v in s]
    for z in sol.V:
        row += [_f(abs(z)), _f(np.angle(z))]
    row += [_f(sol.q_gen[art.case.buses[i].id]) for i in art.pv]
    return row + [_f(sol.residual)]


# ---------------------------------------------------------------------------
# commands

def cmd_germ(args) -> int:
    case = _open_case(args.case)
    Y = build_ybus(case)
    germ = compute_germ(case, Y, n_max=args.order, tol=args.tol)
    res = germ_residuals(case, Y, germ)
    if args.json:
        doc = germ.to_dict()
        doc["bus_ids"] = case.bus_ids
        doc["residuals"] = res
        print(json.dumps(doc, indent=2))
        return EXIT_OK
    print(f"germ of {case.name or args.case}: {germ.order} orders, tail {germ.tail:.3e}")
    print(f"{'bus':>5} {'kind':>5} {'|V_ST|':>10} {'|V0|':>10} {'angle0':>10} {'Q0':>10}")
    for i, b in enumerate(case.buses):
        q = f"{germ.q0(i):10.6f}" if i in germ.pv else " " * 10
        print(f"{b.id:>5} {b.kind.value:>5} {abs(germ.V_ST[i]):10.6f} {abs(germ.V0[i]):10.6f} "
              f"{np.angle(germ.V0[i]):10.6f} {q}")
    for k, v in res.items():
        print(f"residual {k}: {v:.3e}")
    return EXIT_OK


def _print_report(art) -> None:
    print(f"{'order':>5} {'tail':>12}")
    for m, t in enumerate(art.tails, start=1):
        print(f"{m:>5} {t:12.6e}")
    s, p, v = art.case.counts()
    rep = estimate_resources(art.D, art.M, s, p, v)
    print("resources: " + ", ".join(f"{k}={val}" for k, val in rep.to_dict().items()))
    for c in art.conversions:
        print(f"converted bus {c['bus']} to PQ at q_{c['side']} = {c['limit']:.6g} ({c['stage']})")
    for w in art.warnings:
        print(f"warning: {w}", file=sys.stderr)


def cmd_solve(args) -> int:
    case = _open_case(args.case)
    scales = _scales(case, args.scales, args.dims)
    if args.target_s is not None:
        art, _ = solve_with_limits(case, scales, _point(args.target_s, scales.D),
                                   M_max=args.order, tol=args.tol)
    else:
        art = run(case, scales, M_max=args.order, tol=args.tol)
    if args.out:
        artifact_io.save_artifact(art, args.out, "json" if args.json else None)
    _print_report(art)
    return EXIT_DIVERGENCE if art.warnings else EXIT_OK


def cmd_eval(args) -> int:
    art = artifact_io.load_artifact(args.artifact)
    if args.points:
        with open(args.points, newline="") as fh:
            points = [np.array([float(v) for v in row]) for row in csv.reader(fh)
                      if row and not row[0].lstrip().startswith(("#", "s"))]
    else:
        points = [_point(args.s or "0", art.D)]
    if args.json:
        out = []
        for s in points:
            sol = art.evaluate(s)
            out.append({"s": s.tolist(), "V": [[z.real, z.imag] for z in sol.V],
                        "q_gen": sol.q_gen, "residual": sol.residual})
        print(json.dumps(out if args.points else out[0], indent=2))
        return EXIT_OK
    fh, close = _writer(args.out)
    w = csv.writer(fh)
    w.writerow(_solution_header(art))
    for s in points:
        w.writerow(_solution_row(art, s, art.evaluate(s)))
    if close:
        fh.close()
    return EXIT_OK


def cmd_sweep(args) -> int:
    art = artifact_io.load_artifact(args.artifact)
    fh, close = _writer(args.out)
    w = csv.writer(fh)
    w.writerow(_solution_header(art))
    for s in _grid(args.grid, art.D):
        w.writerow(_solution_row(art, s, art.evaluate(s)))
    if close:
        fh.close()
    return EXIT_OK


def cmd_compare(args) -> int:
    art = artifact_io.load_artifact(args.artifact)
    case = _open_case(args.case) if args.case else art.case
    threads = int(os.environ.get("HOLOPF_THREADS", "1"))
    table = nr_grid_compare(case, art, _grid(args.grid, art.D),
                            NRConfig(enforce_q_limits=args.enforce_q_limits), threads=threads)
    fh, close = _writer(args.out)
    w = csv.writer(fh)
    header = _solution_header(art) + ["nr_converged"]
    header += [f"nr_vm_{b.id}" for b in art.case.buses] + [f"nr_va_{b.id}" for b in art.case.buses]
    header += [f"err_{b.id}" for b in art.case.buses] + ["max_err"]
    w.writerow(header)
    nb = art.case.n_bus
    for r in table.rows:
        row = _solution_row(art, r.s, r.mdhem)
        if r.error is None:
            row += ["0"] + [""] * (3 * nb + 1)
        else:
            row += ["1"] + [_f(v) for v in np.abs(r.nr.V)] + [_f(v) for v in np.angle(r.nr.V)]
            row += [_f(e) for e in r.error] + [_f(r.error.max())]
        w.writerow(row)
    if close:
        fh.close()
    worst = table.worst()
    if worst is None:
        print("N-R diverged at every grid point; no error statistics", file=sys.stderr)
    else:
        s, i = worst
        print(f"{len(table.converged)} convergent / {table.n_diverged} divergent points; "
              f"max error {table.max_error:.6e} pu at bus {art.case.buses[i].id}, "
              f"s = {np.round(s, 6).tolist()}; mean {table.mean_error:.6e}", file=sys.stderr)
    return EXIT_OK


def cmd_limits(args) -> int:
    art = artifact_io.load_artifact(args.artifact)
    if args.grid:
        points = _grid(args.grid, art.D)
    else:
        points = np.array([_point(args.s or "0", art.D)])
    case = art.case
    pv_ids = [case.buses[i].id for i in art.pv]
    q = np.array([[art.evaluate(s).q_gen[b] for b in pv_ids] for s in points]).reshape(len(points), -1)
    upper = q - np.array([case.bus(b).q_max for b in pv_ids])

    # a point sits on the q_max boundary when a grid neighbour has the opposite margin sign
    boundary = np.zeros_like(upper, dtype=bool)
    if args.grid and len(points) > 1:
        shape = [len(np.unique(points[:, k])) for k in range(art.D)]
        if int(np.prod(shape)) == len(points):
            u = upper.reshape(*shape, -1)
            b = np.zeros_like(u, dtype=bool)
            for k in range(art.D):
                flip = np.diff(np.sign(u), axis=k) != 0
                lo = [slice(None)] * u.ndim
                hi = [slice(None)] * u.ndim
                lo[k] = slice(0, -1)
                hi[k] = slice(1, None)
                b[tuple(lo)] |= flip
                b[tuple(hi)] |= flip
            boundary = b.reshape(len(points), -1)

    fh, close = _writer(args.out)
    w = csv.writer(fh)
    w.writerow(list(art.scales.names) + ["bus", "q_gen", "q_min", "q_max", "margin_min",
                                         "margin_max", "violation", "boundary"])
    for k, s in enumerate(points):
        for j, b in enumerate(pv_ids):
            bus = case.bus(b)
            qg = q[k, j]
            viol = "max" if qg > bus.q_max else "min" if qg < bus.q_min else ""
            if args.grid and not (viol or boundary[k, j] or args.all):
                continue
            w.writerow([_f(v) for v in s] + [b, _f(qg), _f(bus.q_min), _f(bus.q_max),
                                             _f(qg - bus.q_min), _f(bus.q_max - qg), viol,
                                             int(boundary[k, j])])
    if close:
        fh.close()
    if not args.grid:
        for v in check_q_limits(art, points[0]):
            print(f"bus {v.bus} exceeds q_{v.side}: {v.q_gen:.6f} vs {v.limit:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_info(args) -> int:
    if args.case:
        s, p, v = _open_case(args.case).counts()
    else:
        s, p, v = (int(x) for x in args.counts.split(","))
    rep = estimate_resources(args.dims, args.order, s, p, v)
    if args.json:
        print(json.dumps(rep.to_dict(), indent=2))
    else:
        for k, val in rep.to_dict().items():
            print(f"{k:>18}: {val}")
    return EXIT_OK


def cmd_helm(args) -> int:
    case = _open_case(args.case)
    sol = helm_solve(case, n_max=args.order, tol=args.tol)
    V = sol.V(1.0)
    if args.json:
        print(json.dumps({"bus_ids": case.bus_ids, "V": [[z.real, z.imag] for z in V],
                          "order": sol.order, "tail": sol.tail, "converged": sol.converged},
                         indent=2))
    else:
        print(f"{'bus':>5} {'|V|':>10} {'angle':>10}")
        for b, z in zip(case.buses, V):
            print(f"{b.id:>5} {abs(z):10.6f} {np.angle(z):10.6f}")
        print(f"order {sol.order}, tail {sol.tail:.3e}")
    if not sol.converged:
        print(sol.message, file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="holopf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("germ", help="compute and print the physical germ")
    g.add_argument("--case", required=True, help="case file or bundled case name")
    g.add_argument("--order", type=int, default=40)
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=cmd_germ)

    s = sub.add_parser("solve", help="build a multivariate series artifact")
    s.add_argument("--case", required=True)
    s.add_argument("--scales", help="per-bus (default), single, areas, inline JSON or a JSON file")
    s.add_argument("--dims", type=int, help="1 puts every load on a single scale")
    s.add_argument("--order", type=int, default=12)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--target-s", help="run the Q-limit loop at this scale point, e.g. 1.5,1.5")
    s.add_argument("--out", help="artifact path (.json for JSON, anything else binary)")
    s.add_argument("--json", action="store_true", help="force JSON artifact format")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="evaluate an artifact at scale points")
    e.add_argument("--artifact", required=True)
    e.add_argument("--s", help="comma-separated scale values")
    e.add_argument("--points", help="CSV file with one point per row")
    e.add_argument("--out")
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    for name, func, help_ in (("sweep", cmd_sweep, "evaluate over a grid"),
                              ("compare", cmd_compare, "compare with N-R over a grid")):
        c = sub.add_parser(name, help=help_)
        c.add_argument("--artifact", required=True)
        c.add_argument("--grid", required=True, help="lo:hi:step per axis, comma separated")
        c.add_argument("--out")
        if name == "compare":
            c.add_argument("--case", help="case for N-R (default: the artifact's case)")
            c.add_argument("--enforce-q-limits", action="store_true")
        c.set_defaults(func=func)

    lim = sub.add_parser("limits", help="reactive-limit report")
    lim.add_argument("--artifact", required=True)
    lim.add_argument("--grid")
    lim.add_argument("--s")
    lim.add_argument("--all", action="store_true", help="list every grid point, not only hits")
    lim.add_argument("--out")
    lim.set_defaults(func=cmd_limits)

    i = sub.add_parser("info", help="resource estimate")
    i.add_argument("--dims", type=int, required=True)
    i.add_argument("--order", type=int, required=True)
    src = i.add_mutually_exclusive_group(required=True)
    src.add_argument("--case")
    src.add_argument("--counts", help="slack,pq,pv bus counts")
    i.add_argument("--json", action="store_true")
    i.set_defaults(func=cmd_info)

    h = sub.add_parser("helm", help="conventional one-dimensional embedding at s = 1")
    h.add_argument("--case", required=True)
    h.add_argument("--order", type=int, default=30)
    h.add_argument("--tol", type=float, default=1e-10)
    h.add_argument("--json", action="store_true")
    h.set_defaults(func=cmd_helm)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CaseError, artifact_io.ArtifactError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GermError as exc:
        print(f"germ failure: {exc}", file=sys.stderr)
        return EXIT_GERM
    except LimitLoopError as exc:
        print(f"limit loop: {exc}", file=sys.stderr)
        return EXIT_LIMIT_LOOP
    except MDHEMError as exc:
        print(f"embedding failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
