"""The repair problem as an explicit mixed-integer linear program.

Binary ``x`` (node changed), ``y`` (function class), ``z`` (terminal class)
and a continuous dimension per node, linked by big-M constraints.  Solved
with HiGHS through :func:`scipy.optimize.milp`; it serves as a second,
independent route to the optimum computed by :func:`dimgp.repair.solve`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import lil_matrix

from .dimensions import CLASS_ARITY, TERMINAL_CLASSES
from .repair import BIG_M, Infeasible, RepairProblem

# keeps every inactive big-M row slack: |d_n - (d_1 + d_2)| <= 3 * DIM_BOUND < BIG_M
DIM_BOUND = 16
FUNCTION_CLASSES = tuple(sorted(CLASS_ARITY))


@dataclass(frozen=True)
class MilpResult:
    objective: float
    classes: tuple
    dims: tuple[float, ...]
    changed: tuple[int, ...]


def solve_milp(problem: RepairProblem, big_m: float = BIG_M) -> MilpResult:
    terminal_classes = tuple(TERMINAL_CLASSES)
    cols: dict = {}

    def var(*key) -> int:
        if key not in cols:
            cols[key] = len(cols)
        return cols[key]

    for node in problem.nodes:
        var("x", node.index)
        var("d", node.index)
        if node.is_terminal:
            for t in terminal_classes:
                var("z", node.index, t)
        else:
            for f in FUNCTION_CLASSES:
                var("y", node.index, f)

    rows: list[tuple[dict, float, float]] = []

    def row(coefs: dict, lo: float, hi: float) -> None:
        rows.append((coefs, lo, hi))

    for node in problem.nodes:
        n = node.index
        x, d = cols[("x", n)], cols[("d", n)]
        if node.is_terminal:
            z = {t: cols[("z", n, t)] for t in terminal_classes}
            row({z[t]: 1.0 for t in terminal_classes}, 1, 1)
            row({x: 1.0, z[node.original]: 1.0}, 1, np.inf)
            coefs = {d: 1.0}
            for t in terminal_classes:
                coefs[z[t]] = -float(t)
            row(coefs, 0, 0)
            continue
        y = {f: cols[("y", n, f)] for f in FUNCTION_CLASSES}
        row({y[f]: 1.0 for f in FUNCTION_CLASSES}, 1, 1)
        row({x: 1.0, y[node.original]: 1.0}, 1, np.inf)
        kids = [cols[("d", c)] for c in node.children]
        for f in node.allowed:
            # each expression e must vanish when y[f] = 1:  |e| <= M (1 - y)
            if f == 1:
                exprs = [{d: 1.0, kids[0]: -1.0}, {d: 1.0, kids[1]: -1.0}]
            elif f == 2:
                exprs = [{d: 1.0, kids[0]: -1.0, kids[1]: -1.0}]
            elif f == 3:
                exprs = [{d: 1.0, kids[0]: -1.0, kids[1]: 1.0}]
            elif f == 4:
                exprs = [{d: 1.0, kids[0]: -2.0}]
            elif f == 5:
                exprs = [{d: 1.0, kids[0]: -0.5}]
            else:
                exprs = [{d: 1.0, kids[1]: -1.0}, {d: 1.0, kids[2]: -1.0}]
            for e in exprs:
                row({**e, y[f]: big_m}, -np.inf, big_m)
                row({**{k: -v for k, v in e.items()}, y[f]: big_m}, -np.inf, big_m)

    root_d = cols[("d", 0)]
    row({root_d: 1.0}, float(problem.target), float(problem.target))

    nv = len(cols)
    A = lil_matrix((len(rows), nv))
    lo = np.empty(len(rows))
    hi = np.empty(len(rows))
    for r, (coefs, a, b) in enumerate(rows):
        for c, v in coefs.items():
            A[r, c] = v
        lo[r], hi[r] = a, b

    c = np.zeros(nv)
    integrality = np.ones(nv)
    lb = np.zeros(nv)
    ub = np.ones(nv)
    for key, k in cols.items():
        if key[0] == "x":
            c[k] = float(problem.weight(key[1]))
        elif key[0] == "d":
            integrality[k] = 0
            lb[k], ub[k] = -DIM_BOUND, DIM_BOUND
        elif key[0] == "y" and key[2] not in problem.nodes[key[1]].allowed:
            ub[k] = 0

    res = milp(
        c,
        constraints=LinearConstraint(A.tocsr(), lo, hi),
        integrality=integrality,
        bounds=Bounds(lb, ub),
    )
    if res.status == 2 or res.x is None:
        raise Infeasible("mixed-integer model is infeasible")
    sol = res.x
    classes = []
    for node in problem.nodes:
        if node.is_terminal:
            options = [(sol[cols[("z", node.index, t)]], t) for t in terminal_classes]
        else:
            options = [(sol[cols[("y", node.index, f)]], f) for f in FUNCTION_CLASSES]
        classes.append(max(options, key=lambda o: o[0])[1])
    changed = tuple(
        n.index for n, cl in zip(problem.nodes, classes) if cl != n.original
    )
    dims = tuple(float(sol[cols[("d", n.index)]]) for n in problem.nodes)
    return MilpResult(float(res.fun), tuple(classes), dims, changed)


def milp_objective(problem: RepairProblem) -> Fraction:
    """Optimal objective of the mixed-integer model, snapped to the exact
    weight grid ``k / scale``."""
    value = solve_milp(problem).objective
    return Fraction(round(value * problem.scale), problem.scale)
