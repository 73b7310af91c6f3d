"""Expression trees, two-tree individuals and the genetic operators.

An individual encodes the appointment rule ``A_i = tree1 * M + tree2``.
Trees are immutable; operators return new trees that share untouched
subtrees with their parents.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .clinic import ClinicConfig
from .dimensions import FUNCTION_SET, FUNCTIONS, TERMINAL_SET, TERMINALS

MAX_DEPTH = 8
INIT_MIN_DEPTH = 2
INIT_MAX_DEPTH = 6
MUTATION_MAX_DEPTH = 4
MAX_BREED_RETRIES = 10

PROTECTED_DIV_VALUE = 1e6
PROTECTED_DIV_EPS = 1e-12
_FINITE_LIMIT = 1e300

Path = tuple


@dataclass(frozen=True)
class Node:
    """A terminal (no children) or function node.

    ``value`` is only set for the ephemeral terminals ``alpha``/``beta``.
    """

    name: str
    children: tuple[Node, ...] = ()
    value: Optional[float] = None

    def __post_init__(self):
        if self.name in FUNCTIONS:
            arity = FUNCTIONS[self.name].arity
            if len(self.children) != arity:
                raise ValueError(
                    f"{self.name} takes {arity} children, got {len(self.children)}"
                )
        elif self.name in TERMINALS:
            if self.children:
                raise ValueError(f"terminal {self.name} cannot have children")
            if TERMINALS[self.name].ephemeral and self.value is None:
                raise ValueError(f"ephemeral terminal {self.name} needs a value")
        else:
            raise ValueError(f"unknown node {self.name!r}")

    @property
    def is_terminal(self) -> bool:
        return not self.children

    def __str__(self) -> str:
        return format_tree(self)


def depth(tree: Node) -> int:
    if not tree.children:
        return 1
    return 1 + max(depth(c) for c in tree.children)


def size(tree: Node) -> int:
    return 1 + sum(size(c) for c in tree.children)


def iter_nodes(tree: Node, path: Path = ()) -> Iterator[tuple[Path, Node]]:
    """Pre-order traversal yielding ``(path, node)``; a path is the tuple of
    child indices from the root."""
    yield path, tree
    for k, child in enumerate(tree.children):
        yield from iter_nodes(child, path + (k,))


def subtree_at(tree: Node, path: Path) -> Node:
    for k in path:
        tree = tree.children[k]
    return tree


def replace_at(tree: Node, path: Path, new: Node) -> Node:
    if not path:
        return new
    k = path[0]
    children = list(tree.children)
    children[k] = replace_at(children[k], path[1:], new)
    return Node(tree.name, tuple(children), tree.value)


@dataclass(frozen=True)
class Individual:
    trees: tuple[Node, Node]
    fitness: Optional[float] = field(default=None, compare=False)

    @property
    def tree1(self) -> Node:
        return self.trees[0]

    @property
    def tree2(self) -> Node:
        return self.trees[1]

    @property
    def size(self) -> int:
        return size(self.trees[0]) + size(self.trees[1])

    @property
    def depth(self) -> int:
        return max(depth(t) for t in self.trees)

    def with_tree(self, index: int, tree: Node) -> Individual:
        trees = list(self.trees)
        trees[index] = tree
        return Individual(tuple(trees))

    def with_fitness(self, fitness: float) -> Individual:
        return replace(self, fitness=fitness)

    def __str__(self) -> str:
        return format_individual(self)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class EvalContext:
    P: float
    i: object  # scalar or array of patient indices
    M: float
    V: float
    PN: float
    PW: float
    CR: float

    @classmethod
    def for_clinic(cls, clinic: ClinicConfig, i=None) -> EvalContext:
        if i is None:
            i = np.arange(clinic.P, dtype=float)
        return cls(clinic.P, i, clinic.M, clinic.V, clinic.PN, clinic.PW, clinic.CR)


def _protected_div(a, b):
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(np.abs(b) < PROTECTED_DIV_EPS, PROTECTED_DIV_VALUE, np.divide(a, b))


def _eval(tree: Node, ctx: EvalContext):
    name = tree.name
    if not tree.children:
        if tree.value is not None:
            return tree.value
        return getattr(ctx, name)
    args = [_eval(c, ctx) for c in tree.children]
    if name == "add":
        return np.add(args[0], args[1])
    if name == "sub":
        return np.subtract(args[0], args[1])
    if name == "mul":
        return np.multiply(args[0], args[1])
    if name == "div":
        return _protected_div(args[0], args[1])
    if name == "max":
        return np.maximum(args[0], args[1])
    if name == "min":
        return np.minimum(args[0], args[1])
    if name == "sqrt":
        return np.sqrt(np.abs(args[0]))
    if name == "sq":
        return np.multiply(args[0], args[0])
    # if: first operand strictly positive selects the second
    return np.where(np.greater(args[0], 0), args[1], args[2])


def evaluate(tree: Node, ctx: EvalContext):
    """Evaluate ``tree``; broadcasts when ``ctx.i`` is an array.

    Every function is protected, and overflow is clipped, so the result is
    always finite.
    """
    with np.errstate(all="ignore"):
        out = _eval(tree, ctx)
        out = np.nan_to_num(
            np.asarray(out, dtype=float),
            nan=0.0,
            posinf=_FINITE_LIMIT,
            neginf=-_FINITE_LIMIT,
        )
    out = np.broadcast_to(out, np.shape(ctx.i)).astype(float)
    return float(out) if out.ndim == 0 else out


def clamp_schedule(raw: Sequence[float], L: float) -> np.ndarray:
    """Apply the feasibility rules in order: negative -> 0, below the
    previous time -> previous time, beyond the session -> previous time."""
    out = np.empty(len(raw), dtype=float)
    prev = 0.0
    for k, a in enumerate(raw):
        a = float(a)
        if a < 0:
            a = 0.0
        if k > 0 and a < prev:
            a = prev
        if a > L:
            a = prev if k > 0 else 0.0
        out[k] = a
        prev = a
    return out


def raw_schedule(ind: Individual, clinic: ClinicConfig) -> np.ndarray:
    ctx = EvalContext.for_clinic(clinic)
    with np.errstate(all="ignore"):
        raw = evaluate(ind.tree1, ctx) * clinic.M + evaluate(ind.tree2, ctx)
    return np.nan_to_num(raw, nan=0.0, posinf=_FINITE_LIMIT, neginf=-_FINITE_LIMIT)


def compute_schedule(ind: Individual, clinic: ClinicConfig) -> np.ndarray:
    """Appointment times for patients ``0..P-1``: non-decreasing, in ``[0, L]``."""
    return clamp_schedule(raw_schedule(ind, clinic), clinic.L)


# ---------------------------------------------------------------------------
# Prefix text form


_TOKEN = re.compile(r"\(|\)|[^\s()]+")
_ALIASES = {"ite": "if", "ifthenelse": "if", "if-then-else": "if"}


def _format_value(node: Node) -> str:
    if node.name == "alpha":
        return str(int(node.value))
    text = repr(float(node.value))
    return text if not _is_int_literal(text) else text + ".0"


def _is_int_literal(text: str) -> bool:
    return re.fullmatch(r"[+-]?\d+", text) is not None


def format_tree(tree: Node) -> str:
    if not tree.children:
        return tree.name if tree.value is None else _format_value(tree)
    inner = " ".join(format_tree(c) for c in tree.children)
    return f"({tree.name} {inner})"


def format_individual(ind: Individual) -> str:
    return f"{format_tree(ind.tree1)} | {format_tree(ind.tree2)}"


class ParseError(ValueError):
    pass


def _atom(token: str) -> Node:
    if token in TERMINALS and not TERMINALS[token].ephemeral:
        return Node(token)
    if _is_int_literal(token):
        return Node("alpha", value=float(int(token)))
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"unknown terminal {token!r}") from None
    return Node("beta", value=value)


def parse_tree(text: str) -> Node:
    """Parse a prefix form such as ``(add (mul i M) V)``.

    Integer literals become ``alpha`` constants, other numbers ``beta``.
    """
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise ParseError("empty expression")
    pos = 0

    def parse() -> Node:
        nonlocal pos
        if pos >= len(tokens):
            raise ParseError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        if tok == ")":
            raise ParseError("unexpected ')'")
        if tok != "(":
            return _atom(tok)
        if pos >= len(tokens):
            raise ParseError("unexpected end of expression")
        name = tokens[pos].lower()
        name = _ALIASES.get(name, name)
        pos += 1
        if name not in FUNCTIONS:
            raise ParseError(f"unknown function {tokens[pos - 1]!r}")
        children = []
        while pos < len(tokens) and tokens[pos] != ")":
            children.append(parse())
        if pos >= len(tokens):
            raise ParseError("missing ')'")
        pos += 1
        try:
            return Node(name, tuple(children))
        except ValueError as exc:
            raise ParseError(str(exc)) from None

    tree = parse()
    if pos != len(tokens):
        raise ParseError(f"trailing input after position {pos}")
    return tree


def parse_individual(text: str) -> Individual:
    parts = text.split("|")
    if len(parts) != 2:
        raise ParseError("an individual is written '<tree1> | <tree2>'")
    return Individual((parse_tree(parts[0]), parse_tree(parts[1])))


# ---------------------------------------------------------------------------
# Random generation and genetic operators


def random_terminal(rng: np.random.Generator, name: Optional[str] = None) -> Node:
    if name is None:
        name = TERMINAL_SET[rng.integers(len(TERMINAL_SET))]
    if name == "alpha":
        return Node(name, value=float(rng.integers(0, 3)))
    if name == "beta":
        return Node(name, value=float(rng.random()))
    return Node(name)


def random_tree(
    min_depth: int, max_depth: int, method: str, rng: np.random.Generator
) -> Node:
    """Grow or full tree; ``full`` puts every leaf at ``max_depth``, ``grow``
    yields a depth in ``[min_depth, max_depth]``."""
    if not 1 <= min_depth <= max_depth:
        raise ValueError("need 1 <= min_depth <= max_depth")
    if method not in ("grow", "full"):
        raise ValueError(f"unknown method {method!r}")
    n_t, n_f = len(TERMINAL_SET), len(FUNCTION_SET)

    def build(d: int) -> Node:
        if d >= max_depth:
            return random_terminal(rng)
        if d < min_depth or method == "full":
            choose_function = True
        else:
            choose_function = rng.random() >= n_t / (n_t + n_f)
        if not choose_function:
            return random_terminal(rng)
        name = FUNCTION_SET[rng.integers(n_f)]
        arity = FUNCTIONS[name].arity
        return Node(name, tuple(build(d + 1) for _ in range(arity)))

    return build(1)


def ramped_init(pop_size: int, rng: np.random.Generator) -> list[Individual]:
    """Ramped half-and-half over depths 2..6, drawn per tree."""
    if pop_size <= 0:
        raise ValueError("pop_size must be positive")
    pop = []
    for _ in range(pop_size):
        trees = []
        for _ in range(2):
            d = int(rng.integers(INIT_MIN_DEPTH, INIT_MAX_DEPTH + 1))
            method = "grow" if rng.random() < 0.5 else "full"
            trees.append(random_tree(INIT_MIN_DEPTH, d, method, rng))
        pop.append(Individual(tuple(trees)))
    return pop


def random_path(tree: Node, rng: np.random.Generator) -> Path:
    paths = [p for p, _ in iter_nodes(tree)]
    return paths[rng.integers(len(paths))]


def truncate(tree: Node, rng: np.random.Generator, max_depth: int = MAX_DEPTH) -> Node:
    """Replace function nodes sitting at ``max_depth`` with random terminals."""

    def cut(node: Node, d: int) -> Node:
        if not node.children:
            return node
        if d >= max_depth:
            return random_terminal(rng)
        return Node(node.name, tuple(cut(c, d + 1) for c in node.children), node.value)

    return cut(tree, 1)


def mutate_tree(tree: Node, rng: np.random.Generator, max_depth: int = MAX_DEPTH) -> Node:
    """Replace a uniformly chosen subtree with a fresh grow tree."""
    for _ in range(MAX_BREED_RETRIES):
        path = random_path(tree, rng)
        new = random_tree(1, MUTATION_MAX_DEPTH, "grow", rng)
        child = replace_at(tree, path, new)
        if depth(child) <= max_depth:
            return child
    return truncate(child, rng, max_depth)


def subtree_mutation(ind: Individual, rng: np.random.Generator) -> Individual:
    j = int(rng.integers(2))
    return ind.with_tree(j, mutate_tree(ind.trees[j], rng))


def cs_crossover(
    p1: Individual, p2: Individual, rng: np.random.Generator
) -> tuple[Individual, Individual]:
    """Subtree crossover on one randomly chosen tree, whole-tree swap on the
    other.  Falls back to copying the parents when the depth limit keeps
    being violated."""
    j = int(rng.integers(2))
    other = 1 - j
    t1, t2 = p1.trees[j], p2.trees[j]
    for _ in range(MAX_BREED_RETRIES):
        a, b = random_path(t1, rng), random_path(t2, rng)
        c1 = replace_at(t1, a, subtree_at(t2, b))
        c2 = replace_at(t2, b, subtree_at(t1, a))
        if depth(c1) <= MAX_DEPTH and depth(c2) <= MAX_DEPTH:
            o1 = [None, None]
            o2 = [None, None]
            o1[j], o1[other] = c1, p2.trees[other]
            o2[j], o2[other] = c2, p1.trees[other]
            return Individual(tuple(o1)), Individual(tuple(o2))
    return Individual(p1.trees), Individual(p2.trees)
