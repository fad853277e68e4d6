"""Command-line driver: model files, reports, and the verification suite.

Commands print one JSON report to stdout (optionally copied to a file).
Reports carry no timestamps and use sorted keys, so a fixed seed and flags
reproduce them byte for byte.  Exit codes: 0 success or informative,
1 invariant failure, 2 solver non-convergence, 3 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from typing import Any, Sequence

import numpy as np

from . import bp as bp_mod
from . import gauge as gauge_mod
from . import loops as loops_mod
from . import poly as poly_mod
from .families import random_soft_model
from .model import (
    DEFAULT_ENUMERATION_GUARD,
    FactorTable,
    ModelError,
    MultiGM,
    contract_model,
    map_energy_exact,
    partition_exact,
    soften,
)
from .multigraph import DirectedEdge, GraphError, MultiGraph

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_NONCONVERGENCE = 2
EXIT_INPUT = 3


class ModelFileError(ModelError):
    """Malformed model file; the message names the offending field."""


# -- model file format -------------------------------------------------------


def parse_model(doc: Any) -> MultiGM:
    """Parse the JSON model document into a model."""
    if not isinstance(doc, dict):
        raise ModelFileError("model document must be a JSON object")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list) or not all(isinstance(a, str) for a in nodes):
        raise ModelFileError('"nodes" must be a list of node-id strings')
    edges_field = doc.get("edges")
    if not isinstance(edges_field, list):
        raise ModelFileError('"edges" must be a list of {id, tail, head} objects')
    triples = []
    for i, e in enumerate(edges_field):
        if not isinstance(e, dict) or not {"id", "tail", "head"} <= set(e):
            raise ModelFileError(f'edge #{i}: need "id", "tail" and "head"')
        triples.append((str(e["id"]), str(e["tail"]), str(e["head"])))
    try:
        graph = MultiGraph.build(nodes, triples)
    except GraphError as exc:
        raise ModelFileError(str(exc)) from None

    factors_field = doc.get("factors")
    if not isinstance(factors_field, dict):
        raise ModelFileError('"factors" must map node ids to factor objects')
    factors = {}
    for a in graph.nodes:
        entry = factors_field.get(a)
        if entry is None:
            raise ModelFileError(f"factor for node {a!r} is missing")
        if not isinstance(entry, dict):
            raise ModelFileError(f"factor for node {a!r} must be an object")
        order = entry.get("order")
        expected = [str(d) for d in graph.incidence[a]]
        if order != expected:
            raise ModelFileError(
                f"factor at node {a!r}: order {order!r} does not match the "
                f"incidence list {expected!r}"
            )
        k = len(expected)
        table_field = entry.get("table")
        if not isinstance(table_field, dict):
            raise ModelFileError(f"factor at node {a!r}: missing table object")
        table = np.zeros(2**k)
        for key, value in table_field.items():
            if (
                not isinstance(key, str)
                or len(key) != k
                or any(ch not in "01" for ch in key)
            ):
                raise ModelFileError(
                    f"factor at node {a!r}: malformed bitstring key {key!r} "
                    f"(need length {k} over 0/1)"
                )
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ModelFileError(
                    f"factor at node {a!r}, entry {key!r}: not a finite number"
                )
            if value < 0:
                raise ModelFileError(
                    f"factor at node {a!r}, entry {key!r}: negative value"
                )
            idx = sum(1 << i for i, ch in enumerate(key) if ch == "1")
            table[idx] = float(value)
        if len(table_field) < 2**k and entry.get("soft") is not False:
            raise ModelFileError(
                f"factor at node {a!r}: sparse table (missing keys default "
                'to 0) requires an explicit "soft": false marker'
            )
        factors[a] = FactorTable.from_values(a, graph.incidence[a], table)
    return MultiGM.from_tables(graph, factors)


def model_to_doc(m: MultiGM) -> dict:
    """JSON document for a model (complete tables, canonical key order)."""
    doc: dict[str, Any] = {
        "nodes": list(m.graph.nodes),
        "edges": [
            {"id": e, "tail": m.graph.endpoints[e][0], "head": m.graph.endpoints[e][1]}
            for e in m.graph.edges
        ],
        "factors": {},
    }
    for a in m.graph.nodes:
        f = m.factors[a]
        k = len(f.variables)
        table = {
            "".join("1" if idx >> i & 1 else "0" for i in range(k)): float(v)
            for idx, v in enumerate(f.table)
        }
        doc["factors"][a] = {
            "order": [str(d) for d in f.variables],
            "table": table,
            "soft": f.is_soft,
        }
    return doc


def serialize_model(m: MultiGM) -> str:
    return json.dumps(model_to_doc(m), sort_keys=True, indent=2) + "\n"


def load_model(path: str) -> MultiGM:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ModelFileError(f"cannot read {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path!r} line {exc.lineno}: {exc.msg}") from None
    return parse_model(doc)


def model_digest(m: MultiGM) -> str:
    return hashlib.sha256(serialize_model(m).encode()).hexdigest()


# -- reports -----------------------------------------------------------------


def _emit(report: dict, json_path: str | None) -> None:
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    sys.stdout.write(text)
    if json_path:
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _solver_config(args: argparse.Namespace) -> bp_mod.SolverConfig:
    return bp_mod.SolverConfig(
        damping=args.damping,
        tolerance=args.tol,
        max_sweeps=args.max_sweeps,
        restarts=args.restarts,
        seed=args.seed,
        soften_eps=args.soften,
    )


def _gauge_doc(x: dict[DirectedEdge, float]) -> dict[str, float]:
    return {str(d): v for d, v in sorted(x.items(), key=lambda kv: str(kv[0]))}


# -- commands ----------------------------------------------------------------


def cmd_exact(m: MultiGM, args: argparse.Namespace) -> int:
    z = partition_exact(m, guard=args.guard)
    energy, argmax = map_energy_exact(m, guard=args.guard)
    report = {
        "command": "exact",
        "model_digest": model_digest(m),
        "results": {
            "Z": z,
            "map_energy": energy,
            "argmax": "".join(str(b) for b in argmax),
            "edge_order": list(m.graph.edges),
        },
    }
    _emit(report, args.json)
    return EXIT_OK


def cmd_bp(m: MultiGM, args: argparse.Namespace) -> int:
    cfg = _solver_config(args)
    g = bp_mod.solve_bp(m, cfg)
    msoft = m if m.is_soft else soften(m, cfg.soften_eps)
    results: dict[str, Any] = {
        "Z_vbp": g.value,
        "converged": g.converged,
        "residual": g.residual,
        "sweeps": g.sweeps,
        "softened": g.softened,
        "gauge": _gauge_doc(g.x),
        "stationary_values": list(g.stationary_values),
    }
    if g.converged:
        beliefs = bp_mod.marginals_from_gauge(msoft, g.x)
        results["beta"] = {e: beliefs.edge_marginals[e] for e in sorted(msoft.graph.edges)}
        results["bethe_free_energy"] = bp_mod.bethe_free_energy(msoft, beliefs)
        results["interior_margin"] = beliefs.interior_margin()
    if len(m.graph.edges) <= args.guard:
        z = partition_exact(m, guard=args.guard)
        results["Z"] = z
        results["ratio"] = g.value / z if z > 0 else math.inf
        results["exact"] = bool(z > 0 and abs(g.value - z) <= 1e-6 * z)
    report = {
        "command": "bp",
        "model_digest": model_digest(m),
        "seed": args.seed,
        "results": results,
    }
    _emit(report, args.json)
    return EXIT_OK if g.converged else EXIT_NONCONVERGENCE


def _resolve_order(m: MultiGM, choice: str) -> list[str]:
    if choice == "normal-first":
        return m.graph.normal_first_order()
    if choice == "ids":
        return sorted(m.graph.edges)
    order = [token.strip() for token in choice.split(",") if token.strip()]
    if sorted(order) != sorted(m.graph.edges):
        raise ModelFileError(
            f"--order must list every edge exactly once; got {order!r}"
        )
    return order


def cmd_contract(m: MultiGM, args: argparse.Namespace) -> int:
    order = _resolve_order(m, args.order)
    if args.mode == "exact":
        z0 = partition_exact(m, guard=args.guard)
        steps = [{"step": 0, "eliminated": None, "Z": z0}]
        current = m
        constant = True
        for i, e in enumerate(order, start=1):
            current = contract_model(current, e)
            z = partition_exact(current, guard=args.guard)
            constant = constant and abs(z - z0) <= 1e-12 * max(abs(z0), 1.0)
            steps.append({"step": i, "eliminated": e, "Z": z})
        results = {"mode": "exact", "order": order, "steps": steps, "z_constant": constant}
        code = EXIT_OK if constant else EXIT_INVARIANT
    else:
        cfg = _solver_config(args)
        stages = bp_mod.bp_contract_sequence(m, order, cfg)
        decreases = bp_mod.sequence_decreases(stages, rel_slack=1e-9)
        results = {
            "mode": "bp-sequence",
            "order": order,
            "stages": [
                {
                    "step": s.index,
                    "eliminated": s.eliminated,
                    "edges_left": s.n_edges,
                    "Z_vbp": s.z_vbp,
                    "converged": s.converged,
                }
                for s in stages
            ],
            "non_decreasing": not decreases,
            "decreases": [
                {"step": i, "before": a, "after": b} for i, a, b in decreases
            ],
            "final_Z": stages[-1].z_vbp,
        }
        code = (
            EXIT_OK
            if all(s.converged for s in stages)
            else EXIT_NONCONVERGENCE
        )
    report = {
        "command": "contract",
        "model_digest": model_digest(m),
        "seed": args.seed,
        "results": results,
    }
    _emit(report, args.json)
    return code


def cmd_loops(m: MultiGM, args: argparse.Namespace) -> int:
    cfg = _solver_config(args)
    g = bp_mod.solve_bp(m, cfg)
    report: dict[str, Any] = {
        "command": "loops",
        "model_digest": model_digest(m),
        "seed": args.seed,
    }
    if not g.converged:
        report["results"] = {"converged": False, "residual": g.residual}
        _emit(report, args.json)
        return EXIT_NONCONVERGENCE
    msoft = m if m.is_soft else soften(m, cfg.soften_eps)
    configs = loops_mod.enumerate_generalized_loops(m.graph, guard=args.guard)
    terms = [
        {
            "edges": [m.graph.edges[j] for j, b in enumerate(c) if b],
            "term": loops_mod.loop_term(msoft, g.x, c),
        }
        for c in configs
    ]
    total = loops_mod.loop_series_sum(msoft, g.x, guard=args.guard)
    z = partition_exact(m, guard=args.guard)
    report["results"] = {
        "converged": True,
        "loop_count": len(configs),
        "terms": sorted(terms, key=lambda t: -abs(t["term"])),
        "sum": total,
        "Z": z,
        "relative_error": abs(total - z) / z if z > 0 else math.inf,
    }
    _emit(report, args.json)
    return EXIT_OK


# -- verification suite -------------------------------------------------------


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def _random_gauge(m: MultiGM, rng: np.random.Generator) -> dict[DirectedEdge, float]:
    darts = sorted(m.graph.directed_edges(), key=str)
    return {d: float(np.exp(rng.uniform(np.log(0.25), np.log(4.0)))) for d in darts}


def _verify_one_model(
    m: MultiGM, cfg: bp_mod.SolverConfig, rng: np.random.Generator
) -> dict[str, tuple[bool, str]]:
    """Run every invariant on one model; returns name -> (passed, detail)."""
    out: dict[str, tuple[bool, str]] = {}
    z = partition_exact(m)

    worst = 0.0
    for _ in range(3):
        x = _random_gauge(m, rng)
        zt = partition_exact(gauge_mod.transform_factors(m, x))
        worst = max(worst, _rel_err(zt, z))
    out["gauge_invariance"] = (worst <= 1e-9, f"max rel err {worst:.2e}")

    h0 = poly_mod.build(m)
    worst = 0.0
    ok = True
    for e in m.graph.edges:
        pa = poly_mod.exact_contract_poly(h0, e)
        pb = poly_mod.build(contract_model(m, e))
        for qa, qb in zip(pa.factors, pb.factors):
            if qa.variables != qb.variables or set(qa.coeffs) != set(qb.coeffs):
                ok = False
                continue
            for mask, c in qa.coeffs.items():
                worst = max(worst, _rel_err(c, qb.coeffs[mask]))
    out["contract_commutes"] = (
        ok and worst <= 1e-12, f"max coeff rel err {worst:.2e}"
    )

    order = list(m.graph.edges)
    rng.shuffle(order)
    h = h0
    current = m
    worst = 0.0
    for e in order:
        h = poly_mod.exact_contract_poly(h, e)
        current = contract_model(current, e)
        for _ in range(3):
            x = _random_gauge(current, rng)
            worst = max(
                worst,
                _rel_err(
                    poly_mod.zeta_eval(h, x), gauge_mod.gauge_function(current, x)
                ),
            )
    scalar = poly_mod.zeta_eval(h, {})
    out["algebraic_graphical"] = (worst <= 1e-10, f"max rel err {worst:.2e}")
    out["diff_marg_recovery"] = (
        _rel_err(scalar, z) <= 1e-10, f"rel err {_rel_err(scalar, z):.2e}"
    )

    g = bp_mod.solve_bp(m, cfg)
    out["solver_convergence"] = (g.converged, f"residual {g.residual:.2e}")
    if not g.converged:
        return out
    msoft = m if m.is_soft else soften(m, cfg.soften_eps)

    worst = 0.0
    for a in msoft.graph.nodes:
        f = msoft.factors[a]
        h_a = gauge_mod.h_node(msoft, a, g.x)
        for i in range(len(f.variables)):
            colored = [1 if j == i else 0 for j in range(len(f.variables))]
            worst = max(worst, abs(gauge_mod.q_node(msoft, g.x, a, colored)) / h_a)
    out["no_loose_coloring"] = (worst <= 1e-8, f"max |Q|/h {worst:.2e}")

    saddle_ok = True
    worst_det = -math.inf
    for e in msoft.graph.edges:
        rep = bp_mod.saddle_check(msoft, g.x, e)
        saddle_ok = saddle_ok and rep.det_negative
        worst_det = max(worst_det, rep.determinant)
    out["saddle"] = (saddle_ok, f"max det {worst_det:.2e}")

    total = loops_mod.loop_series_sum(msoft, g.x)
    zs = partition_exact(msoft)
    out["loop_sum"] = (_rel_err(total, zs) <= 1e-8, f"rel err {_rel_err(total, zs):.2e}")

    beliefs = bp_mod.marginals_from_gauge(msoft, g.x)
    f_bp = bp_mod.bethe_free_energy(msoft, beliefs)
    gap = abs(f_bp + math.log(g.value))
    out["value_identity"] = (gap <= 1e-8, f"|F + log z| = {gap:.2e}")

    if m.graph.cycle_rank() == 0:
        out["tree_exactness"] = (
            _rel_err(g.value, z) <= 1e-6, f"rel err {_rel_err(g.value, z):.2e}"
        )
    return out


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _solver_config(args)
    rng = np.random.default_rng(args.seed)
    models: list[MultiGM] = []
    if args.model:
        models.append(load_model(args.model))
    else:
        for _ in range(args.random):
            models.append(random_soft_model(rng, args.edges))

    worst = 0.0
    for _ in range(1000):
        x_p, x_q = np.exp(rng.uniform(np.log(0.05), np.log(20.0), size=2))
        err = np.abs(
            gauge_mod.gauge_matrix(x_p, x_q).T @ gauge_mod.gauge_matrix(x_q, x_p)
            - np.eye(2)
        ).max()
        worst = max(worst, float(err))
    merged: dict[str, tuple[bool, str]] = {
        "orthogonality": (worst <= 1e-13, f"max entry err {worst:.2e}")
    }

    for m in models:
        for name, (passed, detail) in _verify_one_model(m, cfg, rng).items():
            if name in merged:
                old_ok, old_detail = merged[name]
                merged[name] = (old_ok and passed, detail if not passed else old_detail)
            else:
                merged[name] = (passed, detail)

    checks = [
        {"name": name, "passed": passed, "detail": detail}
        for name, (passed, detail) in merged.items()
    ]
    all_passed = all(c["passed"] for c in checks)
    report = {
        "command": "verify",
        "seed": args.seed,
        "n_models": len(models),
        "checks": checks,
        "all_passed": all_passed,
    }
    _emit(report, args.json)
    for c in checks:
        status = "pass" if c["passed"] else "FAIL"
        print(f"[{status}] {c['name']}: {c['detail']}", file=sys.stderr)
    return EXIT_OK if all_passed else EXIT_INVARIANT


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaugepf",
        description="Partition functions of binary multi-graph models: exact, "
        "BP, contraction sequences, and the loop series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("exact", "bp", "contract", "loops", "verify"):
        p = sub.add_parser(name)
        if name == "verify":
            p.add_argument("model", nargs="?", help="model JSON file")
            p.add_argument("--random", type=int, default=10, metavar="N",
                           help="number of random models when no file is given")
            p.add_argument("--edges", type=int, default=6)
        else:
            p.add_argument("model", help="model JSON file")
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--damping", type=float, default=0.5)
        p.add_argument("--restarts", type=int, default=16)
        p.add_argument("--max-sweeps", type=int, default=10_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--soften", type=float, default=1e-12)
        p.add_argument("--guard", type=int, default=DEFAULT_ENUMERATION_GUARD)
        p.add_argument("--json", metavar="PATH", help="also write the report here")
        if name == "contract":
            p.add_argument("--order", default="normal-first",
                           help="normal-first | ids | comma-separated edge ids")
            p.add_argument("--mode", choices=("exact", "bp-sequence"),
                           default="exact")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        m = load_model(args.model)
        if args.command == "exact":
            return cmd_exact(m, args)
        if args.command == "bp":
            return cmd_bp(m, args)
        if args.command == "contract":
            return cmd_contract(m, args)
        if args.command == "loops":
            return cmd_loops(m, args)
        raise AssertionError(args.command)
    except (ModelError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
