"""Time-unit exponents, terminal/function classes and the dimension-gap metric.

Only the time dimension matters for appointment rules, so a dimension is a
single exact rational exponent (:class:`fractions.Fraction`).  ``M`` and ``V``
carry one time unit, every other terminal is dimensionless.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:
    from .tree import Individual, Node

DimExp = Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


@dataclass(frozen=True)
class TerminalDef:
    name: str
    dim: Fraction
    kind: str = "variable"  # or "ephemeral-integer" / "ephemeral-real"

    @property
    def ephemeral(self) -> bool:
        return self.kind != "variable"


@dataclass(frozen=True)
class FunctionDef:
    name: str
    arity: int
    func_class: int


TERMINALS: dict[str, TerminalDef] = {
    t.name: t
    for t in (
        TerminalDef("P", ZERO),
        TerminalDef("i", ZERO),
        TerminalDef("M", ONE),
        TerminalDef("V", ONE),
        TerminalDef("PN", ZERO),
        TerminalDef("PW", ZERO),
        TerminalDef("CR", ZERO),
        TerminalDef("alpha", ZERO, "ephemeral-integer"),
        TerminalDef("beta", ZERO, "ephemeral-real"),
    )
}

# ``sq`` only appears as a repair target (its class may replace sqrt); it is
# never drawn when growing random trees.
FUNCTIONS: dict[str, FunctionDef] = {
    f.name: f
    for f in (
        FunctionDef("add", 2, 1),
        FunctionDef("sub", 2, 1),
        FunctionDef("max", 2, 1),
        FunctionDef("min", 2, 1),
        FunctionDef("mul", 2, 2),
        FunctionDef("div", 2, 3),
        FunctionDef("sq", 1, 4),
        FunctionDef("sqrt", 1, 5),
        FunctionDef("if", 3, 6),
    )
}

FUNCTION_SET: tuple[str, ...] = ("add", "sub", "mul", "div", "max", "min", "sqrt", "if")
TERMINAL_SET: tuple[str, ...] = tuple(TERMINALS)

CLASS_ARITY = {1: 2, 2: 2, 3: 2, 4: 1, 5: 1, 6: 3}

# Function classes each class may be replaced with (arity preserving).
REPLACEABLE: dict[int, tuple[int, ...]] = {
    1: (1, 2, 3),
    2: (1, 2, 3),
    3: (1, 2, 3),
    4: (4, 5),
    5: (4, 5),
    6: (6,),
}


@dataclass(frozen=True)
class TerminalClass:
    dim: Fraction
    members: tuple[TerminalDef, ...]


def _terminal_classes() -> dict[Fraction, TerminalClass]:
    groups: dict[Fraction, list[TerminalDef]] = {}
    for t in TERMINALS.values():
        groups.setdefault(t.dim, []).append(t)
    return {d: TerminalClass(d, tuple(ms)) for d, ms in sorted(groups.items())}


TERMINAL_CLASSES: dict[Fraction, TerminalClass] = _terminal_classes()


class DimMismatch(Exception):
    """Operands that an equality-constrained function cannot combine."""

    def __init__(self, left: Fraction, right: Fraction):
        super().__init__(f"dimension mismatch: {left} != {right}")
        self.left = left
        self.right = right

    @property
    def gap(self) -> Fraction:
        return abs(self.left - self.right)


def as_dim(value) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


def output_dim(func_class: int, child_dims: Sequence[Fraction]) -> Fraction:
    """Dimension produced by a function of ``func_class``.

    Raises :class:`DimMismatch` when the class requires equal operands and
    they differ.
    """
    if len(child_dims) != CLASS_ARITY[func_class]:
        raise ValueError(
            f"class {func_class} takes {CLASS_ARITY[func_class]} operands, "
            f"got {len(child_dims)}"
        )
    if func_class == 1:
        d1, d2 = child_dims
        if d1 != d2:
            raise DimMismatch(d1, d2)
        return d1
    if func_class == 2:
        return child_dims[0] + child_dims[1]
    if func_class == 3:
        return child_dims[0] - child_dims[1]
    if func_class == 4:
        return 2 * child_dims[0]
    if func_class == 5:
        return child_dims[0] / 2
    _, d2, d3 = child_dims
    if d2 != d3:
        raise DimMismatch(d2, d3)
    return d2


def node_dims(tree: Node) -> tuple[Fraction, Fraction]:
    """Bottom-up (dim, accumulated node gap) of ``tree``.

    Mismatched class-1/class-6 nodes take the average of the constrained
    operands as their own dimension.
    """
    if not tree.children:
        return TERMINALS[tree.name].dim, ZERO
    fdef = FUNCTIONS[tree.name]
    dims = []
    gap = ZERO
    for child in tree.children:
        d, g = node_dims(child)
        dims.append(d)
        gap += g
    try:
        return output_dim(fdef.func_class, dims), gap
    except DimMismatch as exc:
        return (exc.left + exc.right) / 2, gap + exc.gap


def tree_dim_gap(tree: Node, target_dim=ZERO) -> tuple[Fraction, Fraction]:
    """Return ``(root_dim, gap)``; the gap is zero iff the tree is consistent
    and its root carries ``target_dim``."""
    root_dim, gap = node_dims(tree)
    return root_dim, gap + abs(root_dim - as_dim(target_dim))


def is_consistent(tree: Node, target_dim=ZERO) -> bool:
    return tree_dim_gap(tree, target_dim)[1] == 0


TREE_TARGETS: tuple[Fraction, Fraction] = (ZERO, ONE)


def individual_dim_gap(ind: Individual) -> Fraction:
    """Sum of both tree gaps; tree1 targets dim 0 (it multiplies M), tree2 dim 1."""
    return sum(
        (tree_dim_gap(t, d)[1] for t, d in zip(ind.trees, TREE_TARGETS)), ZERO
    )
