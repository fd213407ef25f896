"""Typed abstract syntax for the accepted C dialect.

The tree is built by the parser, rewritten by the loop-level transforms,
and interpreted directly by the reference interpreter.  Equality is
structural and ignores source locations, so `parse(print_kernel(k)) == k`
holds for every kernel the parser accepts.

Dialect summary (also in README):
  * integer scalars only, 1..32 bits, signed or unsigned
    (`char`, `short`, `int`, `unsigned ...`, `intN_t`, `uintN_t`)
  * `for` with `<`/`<=` bound and constant positive step; `if`/`else`
  * binary + - * / % << >> & | ^ and comparisons; unary - and !
    (`/` and `%` only by constant powers of two, shifts by constants)
  * arrays of 1 or 2 dimensions; pointer params only as scalar outputs
  * `lut("name", idx)` table lookup intrinsic
  * `ROCCC_load_prev(v)` / `ROCCC_store2next(v, e)` feedback intrinsics
  * `#define NAME <const-expr>` integer constants
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union


@dataclass(frozen=True)
class ScalarType:
    """Integer value type: signedness plus bit width (1..32 at the boundary)."""

    signed: bool
    width: int

    def __post_init__(self):
        if not (1 <= self.width <= 32):
            raise ValueError(f"scalar width {self.width} outside 1..32")

    @property
    def min(self) -> int:
        return -(1 << (self.width - 1)) if self.signed else 0

    @property
    def max(self) -> int:
        return (1 << (self.width - 1)) - 1 if self.signed else (1 << self.width) - 1

    def name(self) -> str:
        return f"int{self.width}_t" if self.signed else f"uint{self.width}_t"

    def wrap(self, value: int) -> int:
        """Two's-complement wraparound of `value` into this type's range."""
        masked = value & ((1 << self.width) - 1)
        if self.signed and masked >= (1 << (self.width - 1)):
            masked -= 1 << self.width
        return masked


INT32 = ScalarType(True, 32)


# --- expressions -----------------------------------------------------------


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class IntLit(Expr):
    value: int


@dataclass(frozen=True)
class VarRef(Expr):
    name: str


@dataclass(frozen=True)
class Deref(Expr):
    """`*name` — legal only as an assignment target (scalar output param)."""

    name: str


@dataclass(frozen=True)
class ArrayRef(Expr):
    name: str
    indices: tuple[Expr, ...]


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # '-' or '!'
    operand: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # + - * / % << >> & | ^ == != < <= > >=
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Select(Expr):
    """Branch-free conditional value; produced by if-conversion."""

    cond: Expr
    if_true: Expr
    if_false: Expr


@dataclass(frozen=True)
class Call(Expr):
    """Helper call; removed by inlining."""

    name: str
    args: tuple[Expr, ...]


@dataclass(frozen=True)
class LutExpr(Expr):
    """`lut("table", index)` — lookup-table component reference."""

    table: str
    index: Expr


@dataclass(frozen=True)
class LoadPrev(Expr):
    """`ROCCC_load_prev(var)` — previous-iteration value of a feedback var."""

    var: str


LValue = Union[VarRef, ArrayRef, Deref]


# --- statements ------------------------------------------------------------


@dataclass(frozen=True)
class Stmt:
    pass


@dataclass(frozen=True)
class VarDecl(Stmt):
    name: str
    ctype: ScalarType
    init: Optional[Expr]


@dataclass(frozen=True)
class ConstTable(Stmt):
    """`const <type> name[...] = { ... };` — compile-time coefficient table.

    Folded to literals once subscripts become constant; never reaches
    hardware.
    """

    name: str
    elem: ScalarType
    extents: tuple[int, ...]
    values: tuple[int, ...]  # row-major


@dataclass(frozen=True)
class Assign(Stmt):
    target: LValue
    value: Expr


@dataclass(frozen=True)
class StoreNext(Stmt):
    """`ROCCC_store2next(var, value);`"""

    var: str
    value: Expr


@dataclass(frozen=True)
class For(Stmt):
    var: str
    start: Expr
    cmp: str  # '<' or '<='
    bound: Expr
    step: Expr
    body: tuple[Stmt, ...]


@dataclass(frozen=True)
class If(Stmt):
    cond: Expr
    then_body: tuple[Stmt, ...]
    else_body: tuple[Stmt, ...]


@dataclass(frozen=True)
class Return(Stmt):
    value: Optional[Expr]


@dataclass(frozen=True)
class ExprStmt(Stmt):
    """Bare call statement; must disappear during inlining."""

    expr: Expr


# --- declarations ----------------------------------------------------------


@dataclass(frozen=True)
class Param:
    """Scalar parameter. `direction` is 'in' for value params, 'out' for
    pointer params (the only pointer use the dialect accepts)."""

    name: str
    ctype: ScalarType
    direction: str  # 'in' | 'out'


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    element: ScalarType
    extents: tuple[int, ...]  # 1 or 2 dimensions
    direction: str  # 'in' | 'out' (resolved by check_restrictions)
    const: bool = False

    def __post_init__(self):
        if not (1 <= len(self.extents) <= 2):
            raise ValueError("arrays must have 1 or 2 dimensions")
        if any(e < 1 for e in self.extents):
            raise ValueError("array extents must be >= 1")


@dataclass(frozen=True)
class FuncDef:
    """Helper function: scalar params, single `return expr;` body."""

    name: str
    params: tuple[tuple[str, ScalarType], ...]
    body: Expr


@dataclass(frozen=True)
class KernelAst:
    """Root of a parsed kernel: the last function definition in the file.

    `helpers` holds the other functions until inline_calls consumes them.
    """

    name: str
    params: tuple[Param, ...]
    arrays: tuple[ArrayDecl, ...]
    body: tuple[Stmt, ...]
    helpers: tuple[FuncDef, ...] = ()


# --- pretty printer --------------------------------------------------------

_PREC = {
    "|": 1, "^": 2, "&": 3,
    "==": 4, "!=": 4,
    "<": 5, "<=": 5, ">": 5, ">=": 5,
    "<<": 6, ">>": 6,
    "+": 7, "-": 7,
    "*": 8, "/": 8, "%": 8,
}
_UNARY_PREC = 9


def print_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, IntLit):
        s = str(e.value)
        return f"({s})" if e.value < 0 and parent_prec >= _UNARY_PREC else s
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, Deref):
        return f"*{e.name}"
    if isinstance(e, ArrayRef):
        return e.name + "".join(f"[{print_expr(i)}]" for i in e.indices)
    if isinstance(e, Unary):
        inner = print_expr(e.operand, _UNARY_PREC)
        return f"{e.op}{inner}"
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        s = f"{print_expr(e.left, prec)} {e.op} {print_expr(e.right, prec + 1)}"
        return f"({s})" if prec < parent_prec else s
    if isinstance(e, Select):
        # printed as a guarded if-expression; re-parsed via if-conversion only
        return (f"({print_expr(e.cond)} ? {print_expr(e.if_true)}"
                f" : {print_expr(e.if_false)})")
    if isinstance(e, Call):
        return f"{e.name}({', '.join(print_expr(a) for a in e.args)})"
    if isinstance(e, LutExpr):
        return f'lut("{e.table}", {print_expr(e.index)})'
    if isinstance(e, LoadPrev):
        return f"ROCCC_load_prev({e.var})"
    raise TypeError(f"unprintable expression {e!r}")


def _print_stmt(s: Stmt, indent: int, out: list):
    pad = "  " * indent
    if isinstance(s, VarDecl):
        init = f" = {print_expr(s.init)}" if s.init is not None else ""
        out.append(f"{pad}{s.ctype.name()} {s.name}{init};")
    elif isinstance(s, ConstTable):
        dims = "".join(f"[{e}]" for e in s.extents)
        if len(s.extents) == 2:
            cols = s.extents[1]
            rows = []
            for r in range(s.extents[0]):
                row = ", ".join(str(v)
                                for v in s.values[r * cols:(r + 1) * cols])
                rows.append("{ " + row + " }")
            vals = ", ".join(rows)
        else:
            vals = ", ".join(str(v) for v in s.values)
        out.append(f"{pad}const {s.elem.name()} {s.name}{dims} = {{ {vals} }};")
    elif isinstance(s, Assign):
        out.append(f"{pad}{print_expr(s.target)} = {print_expr(s.value)};")
    elif isinstance(s, StoreNext):
        out.append(f"{pad}ROCCC_store2next({s.var}, {print_expr(s.value)});")
    elif isinstance(s, For):
        head = (f"for ({s.var} = {print_expr(s.start)}; "
                f"{s.var} {s.cmp} {print_expr(s.bound)}; "
                f"{s.var} = {s.var} + {print_expr(s.step)})")
        out.append(f"{pad}{head} {{")
        for inner in s.body:
            _print_stmt(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, If):
        out.append(f"{pad}if ({print_expr(s.cond)}) {{")
        for inner in s.then_body:
            _print_stmt(inner, indent + 1, out)
        if s.else_body:
            out.append(f"{pad}}} else {{")
            for inner in s.else_body:
                _print_stmt(inner, indent + 1, out)
        out.append(f"{pad}}}")
    elif isinstance(s, Return):
        out.append(f"{pad}return{' ' + print_expr(s.value) if s.value else ''};")
    elif isinstance(s, ExprStmt):
        out.append(f"{pad}{print_expr(s.expr)};")
    else:
        raise TypeError(f"unprintable statement {s!r}")


def print_kernel(k: KernelAst) -> str:
    """Regenerate dialect source; parsing it back yields a structurally
    identical KernelAst (helpers are printed first, in order)."""
    lines = []
    for h in k.helpers:
        params = ", ".join(f"{t.name()} {n}" for n, t in h.params)
        lines.append(f"int {h.name}({params}) {{")
        lines.append(f"  return {print_expr(h.body)};")
        lines.append("}")
        lines.append("")
    sig_parts = []
    for p in k.params:
        if p.direction == "out":
            sig_parts.append(f"{p.ctype.name()} *{p.name}")
        else:
            sig_parts.append(f"{p.ctype.name()} {p.name}")
    for a in k.arrays:
        dims = "".join(f"[{e}]" for e in a.extents)
        prefix = "const " if a.const else ""
        sig_parts.append(f"{prefix}{a.element.name()} {a.name}{dims}")
    lines.append(f"void {k.name}({', '.join(sig_parts)}) {{")
    for s in k.body:
        _print_stmt(s, 1, lines)
    lines.append("}")
    return "\n".join(lines) + "\n"
