"""Minimal-change dimension repair.

A tree is repaired by re-assigning classes to some of its nodes: a terminal
may move to the other terminal class, a function to another class with the
same arity.  Changing node ``n`` costs ``1/depth(n)``; the cheapest
assignment whose root carries the target dimension is sought.

Every constraint of the mixed-integer model couples a node with its own
children only, so the optimum is computed exactly by dynamic programming
over the tree: for each node, the table maps each attainable dimension to
the cheapest assignment of the subtree producing it.  All arithmetic is on
exact rationals and integer-scaled costs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional

import numpy as np

from .dimensions import (
    FUNCTIONS,
    REPLACEABLE,
    TERMINAL_CLASSES,
    TERMINALS,
    TREE_TARGETS,
    as_dim,
    is_consistent,
)
from .tree import (
    INIT_MIN_DEPTH,
    Individual,
    Node,
    iter_nodes,
    mutate_tree,
    random_terminal,
    random_tree,
)

BIG_M = 64
MAX_REPAIR_ITERATIONS = 50

CLASS_FUNCTION = {2: "mul", 3: "div", 4: "sq", 5: "sqrt", 6: "if"}
# class-1 replacement chosen by the semantics of the function it replaces
CLASS1_FROM = {2: "add", 3: "sub"}


class Infeasible(Exception):
    """No class assignment gives the root the target dimension."""


@dataclass(frozen=True)
class RepairNode:
    index: int
    name: str
    depth: int
    children: tuple[int, ...]
    original: object  # terminal: Fraction dim; function: int class
    allowed: tuple

    @property
    def is_terminal(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class RepairProblem:
    nodes: tuple[RepairNode, ...]
    target: Fraction
    scale: int  # lcm of depths; weight_units[n] = scale // depth(n)

    def weight(self, index: int) -> Fraction:
        return Fraction(1, self.nodes[index].depth)

    def weight_units(self, index: int) -> int:
        return self.scale // self.nodes[index].depth

    @property
    def weights(self) -> list[Fraction]:
        return [self.weight(n.index) for n in self.nodes]


def build_problem(tree: Node, target_dim=0) -> RepairProblem:
    """Index the nodes of ``tree`` in pre-order with their classes and depths."""
    paths = [p for p, _ in iter_nodes(tree)]
    index = {p: k for k, p in enumerate(paths)}
    nodes = []
    for k, (path, node) in enumerate(iter_nodes(tree)):
        children = tuple(index[path + (j,)] for j in range(len(node.children)))
        if node.children:
            cls = FUNCTIONS[node.name].func_class
            allowed = REPLACEABLE[cls]
        else:
            cls = TERMINALS[node.name].dim
            allowed = tuple(TERMINAL_CLASSES)
        nodes.append(RepairNode(k, node.name, len(path) + 1, children, cls, allowed))
    scale = math.lcm(*range(1, max(n.depth for n in nodes) + 1))
    return RepairProblem(tuple(nodes), as_dim(target_dim), scale)


@dataclass(frozen=True)
class RepairSolution:
    classes: tuple  # assigned class per node
    dims: tuple[Fraction, ...]  # resulting dimension per node
    changed: tuple[int, ...]  # indices of nodes whose class changes
    objective: Fraction

    def per_node(self, problem: RepairProblem) -> dict[int, object]:
        """``'keep'`` or the replacement class for every node."""
        return {
            n.index: (self.classes[n.index] if n.index in self.changed else "keep")
            for n in problem.nodes
        }


# DP keys order equal-cost options: fewer changes, then deeper changes, then
# lexicographically smallest changed-index tuple.  Pre-order indexing makes
# concatenation (own, child1..., child2...) already sorted.
def _own_key(problem: RepairProblem, node: RepairNode, cls) -> tuple:
    if cls == node.original:
        return (0, 0, 0, ())
    return (problem.weight_units(node.index), 1, -node.depth, (node.index,))


def _add(*keys: tuple) -> tuple:
    return (
        sum(k[0] for k in keys),
        sum(k[1] for k in keys),
        sum(k[2] for k in keys),
        sum((k[3] for k in keys), ()),
    )


def _offer(table: dict, dim: Fraction, key: tuple, choice: tuple, cap: int) -> None:
    if key[0] > cap:
        return
    cur = table.get(dim)
    if cur is None or key < cur[0]:
        table[dim] = (key, choice)


def _function_table(problem, node, tables, cap, window) -> dict:
    table: dict = {}
    kids = [tables[c] for c in node.children]
    for cls in node.allowed:
        own = _own_key(problem, node, cls)
        if own[0] > cap:
            continue
        if cls == 1:
            c1, c2 = kids
            for d in sorted(c1.keys() & c2.keys()):
                key = _add(own, c1[d][0], c2[d][0])
                _offer(table, d, key, (cls, (d, d)), cap)
        elif cls in (2, 3):
            c1, c2 = kids
            sign = 1 if cls == 2 else -1
            items2 = sorted(c2.items())
            for d1, (k1, _) in sorted(c1.items()):
                base = own[0] + k1[0]
                if base > cap:
                    continue
                for d2, (k2, _) in items2:
                    if base + k2[0] > cap:
                        continue
                    d = d1 + sign * d2
                    if window is not None and abs(d) > window:
                        continue
                    _offer(table, d, _add(own, k1, k2), (cls, (d1, d2)), cap)
        elif cls in (4, 5):
            (c1,) = kids
            for d1, (k1, _) in sorted(c1.items()):
                d = 2 * d1 if cls == 4 else d1 / 2
                if window is not None and abs(d) > window:
                    continue
                _offer(table, d, _add(own, k1), (cls, (d1,)), cap)
        else:
            c1, c2, c3 = kids
            d1, (k1, _) = min(c1.items(), key=lambda kv: (kv[1][0], kv[0]))
            for d in sorted(c2.keys() & c3.keys()):
                key = _add(own, k1, c2[d][0], c3[d][0])
                _offer(table, d, key, (cls, (d1, d, d)), cap)
    return table


def _dp(problem: RepairProblem, cap: int, window: Optional[int]) -> Optional[list]:
    tables: list = [None] * len(problem.nodes)
    for node in reversed(problem.nodes):
        if node.is_terminal:
            table: dict = {}
            for cls in node.allowed:
                _offer(table, cls, _own_key(problem, node, cls), (cls, ()), cap)
        else:
            table = _function_table(problem, node, tables, cap, window)
        tables[node.index] = table
    if problem.target not in tables[0]:
        return None
    return tables


def solve(problem: RepairProblem) -> RepairSolution:
    """Optimal class assignment; raises :class:`Infeasible` when none exists."""
    total = sum(problem.weight_units(n.index) for n in problem.nodes)
    # a cheap pass over a small dimension window gives a valid cost cap for
    # the exact pass (any feasible assignment bounds the optimum)
    tables = _dp(problem, total, window=2)
    cap = tables[0][problem.target][0][0] if tables is not None else total
    tables = _dp(problem, cap, window=None)
    if tables is None:
        raise Infeasible(f"root cannot reach dimension {problem.target}")

    n = len(problem.nodes)
    classes: list = [None] * n
    dims: list = [None] * n
    stack = [(0, problem.target)]
    while stack:
        idx, d = stack.pop()
        key, (cls, child_dims) = tables[idx][d]
        classes[idx] = cls
        dims[idx] = d
        stack.extend(zip(problem.nodes[idx].children, child_dims))
    key = tables[0][problem.target][0]
    return RepairSolution(
        tuple(classes), tuple(dims), key[3], Fraction(key[0], problem.scale)
    )


# ---------------------------------------------------------------------------
# Applying a solution


def _pick_terminal(
    dim: Fraction, freqs: Optional[Mapping[str, float]], rng: np.random.Generator
) -> Node:
    members = [t.name for t in TERMINAL_CLASSES[dim].members]
    weights = None
    if freqs:
        w = np.array([float(freqs.get(m, 0)) for m in members])
        if w.sum() > 0:
            weights = w / w.sum()
    name = members[rng.choice(len(members), p=weights)]
    return random_terminal(rng, name)


def apply_solution(
    tree: Node,
    solution: RepairSolution,
    freqs: Optional[Mapping[str, float]] = None,
    rng: Optional[np.random.Generator] = None,
) -> Node:
    """Rebuild ``tree`` with the solution's replacements.

    Terminal replacements are uniform over the new class, or roulette-wheel
    by ``freqs`` when given.  Function replacements keep the arity.
    """
    rng = np.random.default_rng() if rng is None else rng
    changed = set(solution.changed)
    counter = iter(range(len(solution.classes)))

    def rebuild(node: Node) -> Node:
        k = next(counter)
        children = tuple(rebuild(c) for c in node.children)
        if k not in changed:
            if children == node.children:
                return node
            return Node(node.name, children, node.value)
        cls = solution.classes[k]
        if not node.children:
            return _pick_terminal(cls, freqs, rng)
        if cls == 1:
            name = CLASS1_FROM[FUNCTIONS[node.name].func_class]
        else:
            name = CLASS_FUNCTION[cls]
        return Node(name, children)

    return rebuild(tree)


@dataclass
class RepairLog:
    solved: int = 0  # trees that needed the optimiser
    mutations: int = 0  # infeasible models answered by subtree mutation
    fallbacks: int = 0  # trees regenerated after exhausting the loop


def _fresh_consistent_tree(target: Fraction, rng: np.random.Generator) -> Node:
    for _ in range(MAX_REPAIR_ITERATIONS):
        tree = random_tree(INIT_MIN_DEPTH, 4, "grow", rng)
        try:
            return apply_solution(tree, solve(build_problem(tree, target)), None, rng)
        except Infeasible:
            continue
    return _pick_terminal(target, None, rng)


def repair_tree(
    tree: Node,
    target_dim=0,
    freqs: Optional[Mapping[str, float]] = None,
    rng: Optional[np.random.Generator] = None,
    log: Optional[RepairLog] = None,
    max_iter: int = MAX_REPAIR_ITERATIONS,
) -> Node:
    """Make ``tree`` consistent with root dimension ``target_dim``.

    Infeasible trees are mutated and retried; after ``max_iter`` attempts the
    tree is replaced by a freshly generated consistent one.
    """
    rng = np.random.default_rng() if rng is None else rng
    log = RepairLog() if log is None else log
    target = as_dim(target_dim)
    for _ in range(max_iter):
        if is_consistent(tree, target):
            return tree
        try:
            solution = solve(build_problem(tree, target))
        except Infeasible:
            log.mutations += 1
            tree = mutate_tree(tree, rng)
            continue
        log.solved += 1
        return apply_solution(tree, solution, freqs, rng)
    if is_consistent(tree, target):
        return tree
    log.fallbacks += 1
    return _fresh_consistent_tree(target, rng)


def repair_individual(
    ind: Individual,
    freqs: Optional[Mapping[str, float]] = None,
    rng: Optional[np.random.Generator] = None,
    log: Optional[RepairLog] = None,
) -> Individual:
    """Repair both trees (targets 0 and 1); consistent trees pass through."""
    rng = np.random.default_rng() if rng is None else rng
    trees = tuple(
        repair_tree(t, d, freqs, rng, log) for t, d in zip(ind.trees, TREE_TARGETS)
    )
    if trees == ind.trees:
        return ind
    return Individual(trees)
