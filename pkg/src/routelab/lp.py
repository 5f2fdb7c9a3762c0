"""Optimal max-link-utilisation via a multicommodity-flow linear program."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .graph import Edge, Flow, FlowKey, Network, flows_from_demands

SOLVER_TOL = 1e-6


@dataclass(frozen=True)
class LpSolution:
    u_max_optimal: float
    edge_fractions: Mapping[tuple[FlowKey, Edge], float]
    status: str  # optimal | infeasible | unbounded


class LpBackend(Protocol):
    """Solve min c.x s.t. A_ub x <= b_ub, A_eq x = b_eq, bounds per variable."""

    def solve(self, c, a_ub, b_ub, a_eq, b_eq, bounds) -> tuple[str, np.ndarray | None]: ...


class ScipyHighsBackend:
    def solve(self, c, a_ub, b_ub, a_eq, b_eq, bounds):
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")
        if res.status == 0:
            return "optimal", res.x
        if res.status == 2:
            return "infeasible", None
        if res.status == 3:
            return "unbounded", None
        return "infeasible", None


_DEFAULT_BACKEND = ScipyHighsBackend()


def _lp_triples(net: Network, flows: list[Flow]):
    """Sparse constraint system: variables are f[i, e] for each commodity, plus U."""
    n_e = net.edge_count
    n_f = len(flows)
    n_var = n_f * n_e + 1
    u_col = n_f * n_e
    eidx = net.edge_index()

    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
    row = 0
    for i, flow in enumerate(flows):
        for v in range(net.vertex_count):
            for e in net.out_edges[v]:
                eq_rows.append(row)
                eq_cols.append(i * n_e + eidx[e])
                eq_vals.append(1.0)
            for e in net.in_edges[v]:
                eq_rows.append(row)
                eq_cols.append(i * n_e + eidx[e])
                eq_vals.append(-1.0)
            if v == flow.source:
                b_eq.append(1.0)
            elif v == flow.sink:
                b_eq.append(-1.0)
            else:
                b_eq.append(0.0)
            row += 1

    ub_rows, ub_cols, ub_vals, b_ub = [], [], [], []
    for j, e in enumerate(net.edges):
        for i, flow in enumerate(flows):
            ub_rows.append(j)
            ub_cols.append(i * n_e + eidx[e])
            ub_vals.append(flow.demand)
        ub_rows.append(j)
        ub_cols.append(u_col)
        ub_vals.append(-net.capacity[e])
        b_ub.append(0.0)

    a_eq = sp.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(row, n_var))
    a_ub = sp.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(n_e, n_var))
    c = np.zeros(n_var)
    c[u_col] = 1.0
    bounds = [(0.0, 1.0)] * (n_f * n_e) + [(0.0, None)]
    return c, a_ub, np.array(b_ub), a_eq, np.array(b_eq), bounds


def solve_optimal_umax(net: Network, demands: np.ndarray,
                       backend: LpBackend | None = None) -> LpSolution:
    """Minimum achievable max-link-utilisation for a demand matrix.

    The capacity constraint is utilisation-scaled (load <= U * capacity), so
    the LP stays feasible when demand exceeds capacity (U > 1 allowed).
    """
    flows = flows_from_demands(np.asarray(demands, dtype=float))
    if not flows:
        return LpSolution(u_max_optimal=0.0, edge_fractions={}, status="optimal")

    backend = backend or _DEFAULT_BACKEND
    c, a_ub, b_ub, a_eq, b_eq, bounds = _lp_triples(net, flows)
    status, x = backend.solve(c, a_ub, b_ub, a_eq, b_eq, bounds)
    if status != "optimal":
        return LpSolution(u_max_optimal=float("nan"), edge_fractions={}, status=status)

    n_e = net.edge_count
    fractions = {}
    for i, flow in enumerate(flows):
        key = (flow.source, flow.sink)
        for j, e in enumerate(net.edges):
            val = float(x[i * n_e + j])
            if val > 0.0:
                fractions[(key, e)] = min(val, 1.0)
    return LpSolution(u_max_optimal=float(x[-1]), edge_fractions=fractions, status="optimal")


def write_lp_text(net: Network, demands: np.ndarray, path) -> None:
    """Dump the LP in CPLEX-LP text format for external cross-checking."""
    flows = flows_from_demands(np.asarray(demands, dtype=float))
    eidx = net.edge_index()

    def fvar(i: int, e: Edge) -> str:
        return f"f_{i}_{eidx[e]}"

    lines = ["Minimize", " obj: umax", "Subject To"]
    row = 0
    for i, flow in enumerate(flows):
        for v in range(net.vertex_count):
            terms = [f"+ {fvar(i, e)}" for e in net.out_edges[v]]
            terms += [f"- {fvar(i, e)}" for e in net.in_edges[v]]
            rhs = 1.0 if v == flow.source else (-1.0 if v == flow.sink else 0.0)
            if terms:
                lines.append(f" cons{row}: {' '.join(terms)} = {rhs}")
            row += 1
    for j, e in enumerate(net.edges):
        terms = [f"+ {flows[i].demand} {fvar(i, e)}" for i in range(len(flows))]
        lines.append(f" cap{j}: {' '.join(terms)} - {net.capacity[e]} umax <= 0")
    lines.append("Bounds")
    for i in range(len(flows)):
        for e in net.edges:
            lines.append(f" 0 <= {fvar(i, e)} <= 1")
    lines.append(" 0 <= umax")
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
