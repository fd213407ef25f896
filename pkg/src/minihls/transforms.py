"""Loop-level rewriting: constant folding, unrolling, scalar replacement,
feedback detection, if-conversion, and memory-access-pattern extraction.

All transforms are pure KernelAst -> KernelAst (or -> ScalarizedKernel)
functions; semantics preservation is checked against the reference
interpreter in the test suite.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .ast_nodes import (
    ArrayRef, Assign, Binary, ConstTable, Deref, Expr, For, If, IntLit,
    KernelAst, LoadPrev, LutExpr, Return, ScalarType, Select, Stmt, StoreNext,
    Unary, VarDecl, VarRef,
)
from .errors import (
    ConstantOverflow, NonUniformPattern, NotConstantBounds, RestrictionError,
)
from .frontend import affine_form, apply_binop, eval_const_expr, walk_exprs

# --- constant folding --------------------------------------------------------


def fold_constants(kernel: KernelAst) -> KernelAst:
    """Evaluate constant subtrees and apply safe algebraic identities."""
    tables = {s.name: s for s in _walk(kernel.body) if isinstance(s, ConstTable)}

    def fold(e: Expr) -> Expr:
        if isinstance(e, Binary):
            left, right = fold(e.left), fold(e.right)
            if isinstance(left, IntLit) and isinstance(right, IntLit):
                return _lit(apply_binop(e.op, left.value, right.value))
            simplified = _identity(e.op, left, right)
            if simplified is not None:
                return simplified
            return Binary(e.op, left, right)
        if isinstance(e, Unary):
            operand = fold(e.operand)
            if isinstance(operand, IntLit):
                v = operand.value
                return _lit(-v if e.op == "-" else int(v == 0))
            return Unary(e.op, operand)
        if isinstance(e, Select):
            cond = fold(e.cond)
            if isinstance(cond, IntLit):
                return fold(e.if_true if cond.value != 0 else e.if_false)
            return Select(cond, fold(e.if_true), fold(e.if_false))
        if isinstance(e, ArrayRef) and e.name in tables:
            indices = tuple(fold(i) for i in e.indices)
            if all(isinstance(i, IntLit) for i in indices):
                t = tables[e.name]
                flat = 0
                for dim, idx in enumerate(indices):
                    if not (0 <= idx.value < t.extents[dim]):
                        raise RestrictionError(
                            f"constant index {idx.value} outside table"
                            f" '{e.name}' extent {t.extents[dim]}")
                    flat = flat * t.extents[dim] + idx.value
                return IntLit(t.values[flat])
            return ArrayRef(e.name, indices)
        if isinstance(e, ArrayRef):
            return ArrayRef(e.name, tuple(fold(i) for i in e.indices))
        if isinstance(e, LutExpr):
            return LutExpr(e.table, fold(e.index))
        return e

    def fold_stmts(stmts) -> tuple[Stmt, ...]:
        out = []
        for s in stmts:
            if isinstance(s, VarDecl):
                out.append(VarDecl(s.name, s.ctype,
                                   fold(s.init) if s.init is not None else None))
            elif isinstance(s, Assign):
                target = s.target
                if isinstance(target, ArrayRef):
                    target = ArrayRef(target.name,
                                      tuple(fold(i) for i in target.indices))
                out.append(Assign(target, fold(s.value)))
            elif isinstance(s, StoreNext):
                out.append(StoreNext(s.var, fold(s.value)))
            elif isinstance(s, For):
                out.append(For(s.var, fold(s.start), s.cmp, fold(s.bound),
                               fold(s.step), fold_stmts(s.body)))
            elif isinstance(s, If):
                cond = fold(s.cond)
                if isinstance(cond, IntLit):
                    out.extend(fold_stmts(
                        s.then_body if cond.value != 0 else s.else_body))
                else:
                    out.append(If(cond, fold_stmts(s.then_body),
                                  fold_stmts(s.else_body)))
            else:
                out.append(s)
        return tuple(out)

    return dataclasses.replace(kernel, body=fold_stmts(kernel.body))


def _lit(v: int) -> IntLit:
    if v >= (1 << 32) or v < -(1 << 31):
        raise ConstantOverflow(f"folded constant {v} does not fit in 32 bits")
    return IntLit(v)


def _identity(op: str, left: Expr, right: Expr) -> Expr | None:
    lz = isinstance(left, IntLit) and left.value == 0
    rz = isinstance(right, IntLit) and right.value == 0
    lo = isinstance(left, IntLit) and left.value == 1
    ro = isinstance(right, IntLit) and right.value == 1
    if op == "+":
        if lz:
            return right
        if rz:
            return left
    elif op == "-" and rz:
        return left
    elif op == "*":
        if lo:
            return right
        if ro:
            return left
        if lz or rz:
            return IntLit(0)
    elif op in ("<<", ">>") and rz:
        return left
    elif op == "|":
        if lz:
            return right
        if rz:
            return left
    elif op == "^":
        if lz:
            return right
        if rz:
            return left
    elif op == "&" and (lz or rz):
        return IntLit(0)
    elif op == "/" and ro:
        return left
    return None


# --- loop unrolling ----------------------------------------------------------


def loop_trip(s: For) -> tuple[int, int, int]:
    """(lower, count, step) of a constant-bound loop."""
    lower = eval_const_expr(s.start)
    bound = eval_const_expr(s.bound)
    step = eval_const_expr(s.step)
    if lower is None or bound is None or step is None:
        raise NotConstantBounds(f"loop '{s.var}' has non-constant bounds")
    if step < 1:
        raise RestrictionError(f"loop '{s.var}' step must be positive")
    limit = bound + 1 if s.cmp == "<=" else bound
    count = max(0, -(-(limit - lower) // step))
    return lower, count, step


def unroll_full(kernel: KernelAst, loop: str, factor: int | str = "full",
                ) -> KernelAst:
    """Replace every loop with index `loop` by replicated bodies.

    `factor='full'` removes the loop entirely; an integer factor replicates
    the body that many times per remaining iteration (the trip count must
    divide evenly).  Locals declared inside the body are renamed per copy.
    """
    found = [False]

    def rewrite(stmts) -> tuple[Stmt, ...]:
        out = []
        for s in stmts:
            if isinstance(s, For):
                if s.var == loop:
                    found[0] = True
                    out.extend(_expand_loop(s, factor))
                else:
                    out.append(dataclasses.replace(s, body=rewrite(s.body)))
            elif isinstance(s, If):
                out.append(If(s.cond, rewrite(s.then_body), rewrite(s.else_body)))
            else:
                out.append(s)
        return tuple(out)

    body = rewrite(kernel.body)
    if not found[0]:
        raise RestrictionError(f"no loop with index '{loop}'")
    return dataclasses.replace(kernel, body=body)


def _expand_loop(s: For, factor) -> list[Stmt]:
    lower, count, step = loop_trip(s)
    if count < 1:
        raise RestrictionError(f"loop '{s.var}' has zero trip count")
    if factor == "full":
        copies = []
        for k in range(count):
            copies.extend(_instantiate(s.body, s.var, lower + k * step, k))
        return copies
    factor = int(factor)
    if factor < 1:
        raise RestrictionError(f"unroll factor {factor} must be >= 1")
    if factor == 1:
        return [s]
    if count % factor != 0:
        raise RestrictionError(
            f"unroll factor {factor} does not divide trip count {count}"
            f" of loop '{s.var}'")
    body = []
    for k in range(factor):
        offset_idx = (Binary("+", VarRef(s.var), IntLit(k * step))
                      if k else VarRef(s.var))
        body.extend(_substitute_stmts(
            _rename_locals(s.body, k), s.var, offset_idx))
    return [For(s.var, IntLit(lower), "<", IntLit(lower + count * step),
                IntLit(step * factor), tuple(body))]


def _instantiate(stmts, var: str, value: int, copy: int) -> list[Stmt]:
    renamed = _rename_locals(stmts, copy)
    return list(_substitute_stmts(renamed, var, IntLit(value)))


def _rename_locals(stmts, copy: int) -> tuple[Stmt, ...]:
    """Suffix body-local declarations so replicated copies do not collide."""
    declared = [s.name for s in _walk(stmts) if isinstance(s, VarDecl)]
    mapping = {n: f"{n}__{copy}" for n in declared}
    if not mapping:
        return tuple(stmts)
    return _rename_stmts(stmts, mapping)


def _rename_stmts(stmts, mapping) -> tuple[Stmt, ...]:
    def rn_expr(e: Expr) -> Expr:
        if isinstance(e, VarRef):
            return VarRef(mapping.get(e.name, e.name))
        if isinstance(e, Binary):
            return Binary(e.op, rn_expr(e.left), rn_expr(e.right))
        if isinstance(e, Unary):
            return Unary(e.op, rn_expr(e.operand))
        if isinstance(e, Select):
            return Select(rn_expr(e.cond), rn_expr(e.if_true), rn_expr(e.if_false))
        if isinstance(e, ArrayRef):
            return ArrayRef(e.name, tuple(rn_expr(i) for i in e.indices))
        if isinstance(e, LutExpr):
            return LutExpr(e.table, rn_expr(e.index))
        if isinstance(e, LoadPrev):
            return LoadPrev(mapping.get(e.var, e.var))
        return e

    out = []
    for s in stmts:
        if isinstance(s, VarDecl):
            out.append(VarDecl(mapping.get(s.name, s.name), s.ctype,
                               rn_expr(s.init) if s.init is not None else None))
        elif isinstance(s, Assign):
            t = s.target
            if isinstance(t, VarRef):
                t = VarRef(mapping.get(t.name, t.name))
            elif isinstance(t, ArrayRef):
                t = ArrayRef(t.name, tuple(rn_expr(i) for i in t.indices))
            out.append(Assign(t, rn_expr(s.value)))
        elif isinstance(s, StoreNext):
            out.append(StoreNext(mapping.get(s.var, s.var), rn_expr(s.value)))
        elif isinstance(s, For):
            out.append(For(s.var, rn_expr(s.start), s.cmp, rn_expr(s.bound),
                           rn_expr(s.step), _rename_stmts(s.body, mapping)))
        elif isinstance(s, If):
            out.append(If(rn_expr(s.cond), _rename_stmts(s.then_body, mapping),
                          _rename_stmts(s.else_body, mapping)))
        else:
            out.append(s)
    return tuple(out)


def _substitute_stmts(stmts, var: str, value: Expr) -> tuple[Stmt, ...]:
    mapping_expr = value

    def sub_expr(e: Expr) -> Expr:
        if isinstance(e, VarRef):
            return mapping_expr if e.name == var else e
        if isinstance(e, Binary):
            return Binary(e.op, sub_expr(e.left), sub_expr(e.right))
        if isinstance(e, Unary):
            return Unary(e.op, sub_expr(e.operand))
        if isinstance(e, Select):
            return Select(sub_expr(e.cond), sub_expr(e.if_true),
                          sub_expr(e.if_false))
        if isinstance(e, ArrayRef):
            return ArrayRef(e.name, tuple(sub_expr(i) for i in e.indices))
        if isinstance(e, LutExpr):
            return LutExpr(e.table, sub_expr(e.index))
        return e

    out = []
    for s in stmts:
        if isinstance(s, VarDecl):
            out.append(VarDecl(s.name, s.ctype,
                               sub_expr(s.init) if s.init is not None else None))
        elif isinstance(s, Assign):
            t = s.target
            if isinstance(t, ArrayRef):
                t = ArrayRef(t.name, tuple(sub_expr(i) for i in t.indices))
            out.append(Assign(t, sub_expr(s.value)))
        elif isinstance(s, StoreNext):
            out.append(StoreNext(s.var, sub_expr(s.value)))
        elif isinstance(s, For):
            out.append(For(s.var, sub_expr(s.start), s.cmp, sub_expr(s.bound),
                           sub_expr(s.step), _substitute_stmts(s.body, var, value)))
        elif isinstance(s, If):
            out.append(If(sub_expr(s.cond),
                          _substitute_stmts(s.then_body, var, value),
                          _substitute_stmts(s.else_body, var, value)))
        else:
            out.append(s)
    return tuple(out)


def _walk(stmts):
    for s in stmts:
        yield s
        if isinstance(s, For):
            yield from _walk(s.body)
        elif isinstance(s, If):
            yield from _walk(s.then_body)
            yield from _walk(s.else_body)


# --- scalar replacement -------------------------------------------------------


@dataclass(frozen=True)
class LoopIndex:
    var: str
    lower: int
    count: int
    step: int


@dataclass(frozen=True)
class LoopSpec:
    indices: tuple[LoopIndex, ...]  # outermost first; empty for loop-free

    @property
    def trip(self) -> int:
        t = 1
        for ix in self.indices:
            t *= ix.count
        return t


@dataclass(frozen=True)
class AccessDim:
    """One subscript dimension: `coeff * loop_var + const` (var may be None)."""

    var: str | None
    coeff: int
    const: int


@dataclass(frozen=True)
class Load:
    scalar: str
    array: str
    dims: tuple[AccessDim, ...]
    ctype: ScalarType


@dataclass(frozen=True)
class Store:
    array: str
    dims: tuple[AccessDim, ...]
    scalar: str
    ctype: ScalarType


@dataclass(frozen=True)
class Feedback:
    var: str
    prev: str
    next: str
    init: int
    ctype: ScalarType


@dataclass
class ScalarizedKernel:
    """Figure of the kernel after memory access is isolated from compute.

    `compute` is a loop-free statement list referencing only scalars:
    load scalars, feedback `_prev` aliases, scalar input params, and
    locals.  Stores name the compute scalar written to each array slot.
    """

    name: str
    loop: LoopSpec
    loads: tuple[Load, ...]
    compute: tuple[Stmt, ...]
    stores: tuple[Store, ...]
    feedbacks: tuple[Feedback, ...]
    scalar_ins: tuple[tuple[str, ScalarType], ...]
    local_types: dict[str, ScalarType] = field(default_factory=dict,
                                               compare=False)
    fresh_counter: int = field(default=0, compare=False)

    def fresh(self, base: str) -> str:
        name = f"{base}_t{self.fresh_counter}"
        self.fresh_counter += 1
        return name


def scalar_replace(kernel: KernelAst) -> ScalarizedKernel:
    """Hoist array accesses out of the loop body into named scalars and
    detect loop-carried feedback variables."""
    arrays = {a.name: a for a in kernel.arrays}
    params = {p.name: p for p in kernel.params}

    pre: list[Stmt] = []
    loops: list[For] = []
    inner_body: tuple[Stmt, ...] = ()
    post: list[Stmt] = []

    # split top level into pre / loop nest / post
    body = list(kernel.body)
    loop_pos = next((i for i, s in enumerate(body) if isinstance(s, For)), None)
    if loop_pos is None:
        pre, inner_body, post = [], kernel.body, []
    else:
        pre = body[:loop_pos]
        post = body[loop_pos + 1:]
        cur = body[loop_pos]
        while True:
            loops.append(cur)
            fors = [s for s in cur.body if isinstance(s, For)]
            if not fors:
                inner_body = cur.body
                break
            if len(fors) > 1 or len(cur.body) != 1:
                raise RestrictionError(
                    "loop nests must be perfect (a single inner loop and"
                    " nothing else) after unrolling")
            cur = fors[0]
        extra = [s for s in body[loop_pos + 1:] if isinstance(s, For)]
        if extra:
            raise RestrictionError("multiple top-level loops are not supported")
    if len(loops) > 2:
        raise RestrictionError(
            f"{len(loops)} rolled loops remain; at most 2 are supported"
            " (unroll the inner ones)")

    indices = []
    for f in loops:
        lower, count, step = loop_trip(f)
        if count < 1:
            raise RestrictionError(f"loop '{f.var}' has zero trip count")
        indices.append(LoopIndex(f.var, lower, count, step))
    loop = LoopSpec(tuple(indices))
    loop_vars = [ix.var for ix in indices]

    # pre-loop declarations: constants or feedback candidates
    const_env: dict[str, int] = {}
    decl_types: dict[str, ScalarType] = {}
    decl_inits: dict[str, int | None] = {}
    for s in pre:
        if isinstance(s, ConstTable):
            continue  # folded away earlier; leftovers caught at load scan
        if isinstance(s, Return):
            continue
        if not isinstance(s, VarDecl):
            raise RestrictionError(
                "only declarations may precede the loop nest")
        decl_types[s.name] = s.ctype
        if s.init is not None:
            v = eval_const_expr(s.init)
            if v is None:
                raise RestrictionError(
                    f"initializer of '{s.name}' must be constant")
            decl_inits[s.name] = s.ctype.wrap(v)
        else:
            decl_inits[s.name] = None

    # move post-loop scalar stores into the per-iteration compute
    tail: list[Stmt] = []
    for s in post:
        if isinstance(s, Return):
            if s.value is not None:
                raise RestrictionError("kernel return with a value")
            continue
        if isinstance(s, Assign) and isinstance(s.target, Deref):
            tail.append(s)
        else:
            raise RestrictionError(
                "only `*out = ...;` assignments may follow the loop nest")

    work = list(inner_body) + tail

    # feedback detection: pre-loop vars read before any sure write, or
    # named by the feedback intrinsics
    first_reads = _read_before_write(work)
    intrinsic_vars = set()
    for s in _walk(work):
        if isinstance(s, StoreNext):
            intrinsic_vars.add(s.var)
        for e in _stmt_exprs(s):
            for sub in walk_exprs(e):
                if isinstance(sub, LoadPrev):
                    intrinsic_vars.add(sub.var)
    feedback_vars = []
    for v in sorted(first_reads | intrinsic_vars):
        if v not in decl_types:
            if v in intrinsic_vars:
                raise RestrictionError(
                    f"feedback intrinsic on '{v}' which is not declared"
                    " before the loop")
            continue  # params and load scalars are plain inputs
        if not _is_written(work, v):
            continue  # read-only pre-loop constant
        if decl_inits.get(v) is None:
            raise RestrictionError(
                f"feedback variable '{v}' needs a constant initializer")
        feedback_vars.append(v)

    sk = ScalarizedKernel(kernel.name, loop, (), (), (), (), (), {})
    used_names = set(decl_types) | set(params) | set(arrays) | set(loop_vars)

    def unique(base: str) -> str:
        name = base
        n = 0
        while name in used_names:
            name = f"{base}_{n}"
            n += 1
        used_names.add(name)
        return name

    feedbacks = []
    fb_alias: dict[str, tuple[str, str]] = {}
    for v in feedback_vars:
        prev, nxt = unique(f"{v}_prev"), unique(f"{v}_next")
        feedbacks.append(Feedback(v, prev, nxt, decl_inits[v], decl_types[v]))
        fb_alias[v] = (prev, nxt)

    # substitute read-only pre-loop constants
    const_env = {v: decl_inits[v] for v in decl_types
                 if v not in fb_alias and decl_inits[v] is not None
                 and not _is_written(work, v)}

    # collect loads, ordered by (array, offsets)
    load_map: dict[tuple, str] = {}
    loads: list[Load] = []
    counters: dict[str, int] = {}

    def affine_dims(name: str, idx_exprs) -> tuple[AccessDim, ...]:
        dims = []
        for e in idx_exprs:
            form = affine_form(e, loop_vars)
            if form is None:
                raise RestrictionError(f"non-affine subscript on '{name}'")
            coeffs, const = form
            if len(coeffs) > 1:
                raise RestrictionError(
                    f"subscript on '{name}' mixes loop indices in one"
                    " dimension")
            if coeffs:
                var, coeff = next(iter(coeffs.items()))
                if coeff < 0:
                    raise RestrictionError(
                        f"negative stride subscript on '{name}'")
                dims.append(AccessDim(var, coeff, const))
            else:
                dims.append(AccessDim(None, 0, const))
        return tuple(dims)

    def scalarize_expr(e: Expr) -> Expr:
        if isinstance(e, ArrayRef):
            name = e.name
            if name not in arrays:
                raise RestrictionError(
                    f"subscripted '{name}' is not an array (constant tables"
                    " must fold away before scalar replacement)")
            if arrays[name].direction != "in":
                raise RestrictionError(f"load from output array '{name}'")
            dims = affine_dims(name, e.indices)
            key = (name, tuple((d.var, d.coeff, d.const) for d in dims))
            if key not in load_map:
                k = counters.get(name, 0)
                counters[name] = k + 1
                load_map[key] = unique(f"{name}{k}")
                loads.append(Load(load_map[key], name, dims,
                                  arrays[name].element))
            return VarRef(load_map[key])
        if isinstance(e, VarRef):
            if e.name in loop_vars:
                raise RestrictionError(
                    f"loop index '{e.name}' used in computation"
                    " (indices may only appear in subscripts)")
            if e.name in const_env:
                return IntLit(const_env[e.name])
            return e
        if isinstance(e, Binary):
            return Binary(e.op, scalarize_expr(e.left), scalarize_expr(e.right))
        if isinstance(e, Unary):
            return Unary(e.op, scalarize_expr(e.operand))
        if isinstance(e, Select):
            return Select(scalarize_expr(e.cond), scalarize_expr(e.if_true),
                          scalarize_expr(e.if_false))
        if isinstance(e, LutExpr):
            return LutExpr(e.table, scalarize_expr(e.index))
        if isinstance(e, LoadPrev):
            if e.var not in fb_alias:
                raise RestrictionError(
                    f"ROCCC_load_prev on non-feedback '{e.var}'")
            return VarRef(e.var)  # reads current value; aliased below
        return e

    stores: list[Store] = []
    store_seen: dict[str, list[tuple]] = {}
    compute: list[Stmt] = []
    tmp_counter = [0]

    # Already-hoisted loads (`A0 = A[i];` prologue) keep their names instead
    # of gaining a second scalar; this makes scalar replacement idempotent.
    absorbed: set[str] = set()
    assign_counts: dict[str, int] = {}
    for s in _walk(work):
        if isinstance(s, Assign) and isinstance(s.target, VarRef):
            assign_counts[s.target.name] = assign_counts.get(s.target.name, 0) + 1
        elif isinstance(s, VarDecl) and s.init is not None:
            assign_counts[s.name] = assign_counts.get(s.name, 0) + 1
    decl_of = {s.name: s for s in _walk(work) if isinstance(s, VarDecl)}
    seen_keys: set[tuple] = set()
    for s in work:
        if isinstance(s, VarDecl) and s.init is None:
            continue
        if (isinstance(s, Assign) and isinstance(s.target, VarRef)
                and isinstance(s.value, ArrayRef)
                and s.value.name in arrays
                and arrays[s.value.name].direction == "in"
                and assign_counts.get(s.target.name, 0) == 1
                and s.target.name in decl_of
                and decl_of[s.target.name].ctype
                == arrays[s.value.name].element):
            try:
                dims = affine_dims(s.value.name, s.value.indices)
            except RestrictionError:
                break
            key = (s.value.name,
                   tuple((d.var, d.coeff, d.const) for d in dims))
            if key in seen_keys:
                break
            seen_keys.add(key)
            name = s.target.name
            load_map[key] = name
            counters[s.value.name] = counters.get(s.value.name, 0) + 1
            loads.append(Load(name, s.value.name, dims,
                              arrays[s.value.name].element))
            used_names.add(name)
            absorbed.add(name)
        else:
            break

    def out_elem_type(name: str) -> ScalarType:
        return arrays[name].element

    def self_reuse(value: Expr, elem: ScalarType) -> str | None:
        """`C[i] = Tmp0` keeps Tmp0 as the store scalar when that is safe
        (single assignment, matching type); makes scalar_replace idempotent."""
        if not isinstance(value, VarRef):
            return None
        name = value.name
        assigns = sum(1 for s in _walk(work)
                      if (isinstance(s, Assign) and isinstance(s.target, VarRef)
                          and s.target.name == name)
                      or (isinstance(s, VarDecl) and s.name == name
                          and s.init is not None))
        if assigns != 1:
            return None
        decl = next((s for s in _walk(work)
                     if isinstance(s, VarDecl) and s.name == name), None)
        if decl is None or decl.ctype != elem:
            return None
        return name

    def scalarize_stmts(stmts, sink: list):
        for s in stmts:
            if isinstance(s, VarDecl):
                if s.name in absorbed:
                    continue
                decl_copy = VarDecl(s.name, s.ctype,
                                    scalarize_expr(s.init) if s.init else None)
                sink.append(decl_copy)
            elif isinstance(s, ConstTable):
                continue
            elif isinstance(s, Assign):
                if (isinstance(s.target, VarRef)
                        and s.target.name in absorbed):
                    continue
                if isinstance(s.target, ArrayRef):
                    name = s.target.name
                    if name not in arrays or arrays[name].direction != "out":
                        raise RestrictionError(
                            f"store to non-output array '{name}'")
                    dims = affine_dims(name, s.target.indices)
                    sig = tuple((d.var, d.coeff) for d in dims)
                    consts = tuple(d.const for d in dims)
                    prior = store_seen.setdefault(name, [])
                    for (psig, pconsts) in prior:
                        if psig != sig:
                            raise RestrictionError(
                                f"stores to '{name}' use different index"
                                " coefficients")
                        if pconsts == consts:
                            raise RestrictionError(
                                f"two stores alias '{name}' at the same"
                                " offset in one iteration")
                    prior.append((sig, consts))
                    elem = out_elem_type(name)
                    scalar = self_reuse(s.value, elem)
                    if scalar is None:
                        scalar = unique(f"Tmp{tmp_counter[0]}")
                        tmp_counter[0] += 1
                        sink.append(VarDecl(scalar, elem, None))
                        sink.append(Assign(VarRef(scalar),
                                           scalarize_expr(s.value)))
                    stores.append(Store(name, dims, scalar, elem))
                elif isinstance(s.target, Deref):
                    name = s.target.name
                    ctype = params[name].ctype
                    dims = (AccessDim(None, 0, 0),)
                    prior = store_seen.setdefault(name, [])
                    if prior:
                        raise RestrictionError(
                            f"scalar output '{name}' written twice")
                    prior.append(((("", 0),), (0,)))
                    scalar = self_reuse(s.value, ctype)
                    if scalar is None:
                        scalar = unique(f"Tmp{tmp_counter[0]}")
                        tmp_counter[0] += 1
                        sink.append(VarDecl(scalar, ctype, None))
                        sink.append(Assign(VarRef(scalar),
                                           scalarize_expr(s.value)))
                    stores.append(Store(name, dims, scalar, ctype))
                else:
                    sink.append(Assign(s.target, scalarize_expr(s.value)))
            elif isinstance(s, StoreNext):
                sink.append(Assign(VarRef(s.var), scalarize_expr(s.value)))
            elif isinstance(s, If):
                then_sink: list = []
                else_sink: list = []
                scalarize_stmts(s.then_body, then_sink)
                scalarize_stmts(s.else_body, else_sink)
                sink.append(If(scalarize_expr(s.cond), tuple(then_sink),
                               tuple(else_sink)))
            elif isinstance(s, Return):
                continue
            else:
                raise RestrictionError(
                    f"unsupported statement in loop body: {type(s).__name__}")

    scalarize_stmts(work, compute)

    # feedback aliases: enter with the previous value, leave with the next
    head = []
    tail_stmts = []
    for fb in feedbacks:
        head.append(VarDecl(fb.var, fb.ctype, None))
        head.append(Assign(VarRef(fb.var), VarRef(fb.prev)))
        tail_stmts.append(VarDecl(fb.next, fb.ctype, None))
        tail_stmts.append(Assign(VarRef(fb.next), VarRef(fb.var)))
    compute = head + compute + tail_stmts

    scalar_ins = tuple(sorted(
        (p.name, p.ctype) for p in kernel.params
        if p.direction == "in" and _reads_var(compute, p.name)))

    local_types = dict(decl_types)
    for fb in feedbacks:
        local_types[fb.prev] = fb.ctype
        local_types[fb.next] = fb.ctype
    for ld in loads:
        local_types[ld.scalar] = ld.ctype
    for s in _walk(compute):
        if isinstance(s, VarDecl):
            local_types[s.name] = s.ctype
    for name, ctype in scalar_ins:
        local_types[name] = ctype

    sk.loads = tuple(loads)
    sk.compute = tuple(compute)
    sk.stores = tuple(stores)
    sk.feedbacks = tuple(feedbacks)
    sk.scalar_ins = scalar_ins
    sk.local_types = local_types
    if not sk.stores:
        raise RestrictionError("kernel stores no output")
    return sk


def _stmt_exprs(s: Stmt):
    if isinstance(s, VarDecl):
        return [s.init] if s.init is not None else []
    if isinstance(s, Assign):
        exprs = [s.value]
        if isinstance(s.target, ArrayRef):
            exprs.extend(s.target.indices)
        return exprs
    if isinstance(s, StoreNext):
        return [s.value]
    if isinstance(s, If):
        return [s.cond]
    return []


def _read_before_write(stmts) -> set:
    """Variables whose loop-entry value may be read (must-write analysis)."""
    reads: set[str] = set()

    def expr_reads(e: Expr, written: set):
        for sub in walk_exprs(e):
            if isinstance(sub, VarRef) and sub.name not in written:
                reads.add(sub.name)
            elif isinstance(sub, LoadPrev):
                reads.add(sub.var)

    def scan(body, written: set) -> set:
        written = set(written)
        for s in body:
            for e in _stmt_exprs(s):
                expr_reads(e, written)
            if isinstance(s, Assign) and isinstance(s.target, VarRef):
                written.add(s.target.name)
            elif isinstance(s, StoreNext):
                written.add(s.var)
            elif isinstance(s, VarDecl) and s.init is not None:
                written.add(s.name)
            elif isinstance(s, If):
                w_then = scan(s.then_body, written)
                w_else = scan(s.else_body, written)
                written |= (w_then & w_else)
        return written

    scan(stmts, set())
    return reads


def _is_written(stmts, var: str) -> bool:
    for s in _walk(stmts):
        if isinstance(s, Assign) and isinstance(s.target, VarRef) \
                and s.target.name == var:
            return True
        if isinstance(s, StoreNext) and s.var == var:
            return True
    return False


def _reads_var(stmts, var: str) -> bool:
    for s in _walk(stmts):
        for e in _stmt_exprs(s):
            for sub in walk_exprs(e):
                if isinstance(sub, VarRef) and sub.name == var:
                    return True
    return False


# --- if-conversion -------------------------------------------------------------


def predicate(sk: ScalarizedKernel) -> ScalarizedKernel:
    """Convert if/else in the compute fragment into Select assignments.

    Both arms are always evaluated; every variable assigned in either arm
    receives `Select(cond, then_value, else_value)` where a missing arm
    contributes the prior value.
    """
    types = dict(sk.local_types)

    def convert(stmts) -> list[Stmt]:
        out: list[Stmt] = []
        for s in stmts:
            if not isinstance(s, If):
                out.append(s)
                continue
            then_flat = convert(s.then_body)
            else_flat = convert(s.else_body)
            cname = sk.fresh("cond")
            types[cname] = ScalarType(False, 1)
            out.append(VarDecl(cname, types[cname], None))
            out.append(Assign(VarRef(cname), _as_bool(s.cond)))
            then_stmts, then_env = _rename_arm(sk, types, then_flat, "t")
            else_stmts, else_env = _rename_arm(sk, types, else_flat, "f")
            out.extend(then_stmts)
            out.extend(else_stmts)
            for var in sorted(set(then_env) | set(else_env)):
                t_val = VarRef(then_env[var]) if var in then_env else VarRef(var)
                f_val = VarRef(else_env[var]) if var in else_env else VarRef(var)
                out.append(Assign(VarRef(var),
                                  Select(VarRef(cname), t_val, f_val)))
        return out

    new_compute = tuple(convert(list(sk.compute)))
    result = dataclasses.replace(sk)
    result.compute = new_compute
    result.local_types = types
    return result


def _as_bool(e: Expr) -> Expr:
    """Normalize a condition to a 1-bit value."""
    if isinstance(e, Binary) and e.op in ("==", "!=", "<", "<=", ">", ">="):
        return e
    if isinstance(e, Unary) and e.op == "!":
        return e
    return Binary("!=", e, IntLit(0))


def _rename_arm(sk: ScalarizedKernel, types: dict, stmts: list,
                suffix: str) -> tuple[list[Stmt], dict[str, str]]:
    """Rename arm-local assignments to fresh temps; returns (stmts, final
    name of each variable the arm assigns)."""
    env: dict[str, str] = {}
    out: list[Stmt] = []

    def rd(e: Expr) -> Expr:
        if isinstance(e, VarRef):
            return VarRef(env.get(e.name, e.name))
        if isinstance(e, Binary):
            return Binary(e.op, rd(e.left), rd(e.right))
        if isinstance(e, Unary):
            return Unary(e.op, rd(e.operand))
        if isinstance(e, Select):
            return Select(rd(e.cond), rd(e.if_true), rd(e.if_false))
        if isinstance(e, LutExpr):
            return LutExpr(e.table, rd(e.index))
        return e

    for s in stmts:
        if isinstance(s, VarDecl):
            if s.init is None:
                types.setdefault(s.name, s.ctype)
                continue
            fresh = sk.fresh(f"{s.name}_{suffix}")
            types[fresh] = s.ctype
            types.setdefault(s.name, s.ctype)
            out.append(VarDecl(fresh, s.ctype, rd(s.init)))
            env[s.name] = fresh
        elif isinstance(s, Assign) and isinstance(s.target, VarRef):
            var = s.target.name
            fresh = sk.fresh(f"{var}_{suffix}")
            types[fresh] = types.get(var, ScalarType(True, 32))
            out.append(VarDecl(fresh, types[fresh], rd(s.value)))
            env[var] = fresh
        else:
            raise RestrictionError(
                "only scalar assignments are allowed inside if/else arms")
    return out, env


# --- window detection -----------------------------------------------------------


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window access pattern of one input array."""

    array: str
    shape: tuple[int, ...]       # window extent per dimension, in elements
    stride: tuple[int, ...]      # elements advanced per iteration of its loop
    data_width: int              # element bits
    bus_width: int               # memory word bits (multiple of 8, >= data)
    base: tuple[int, ...]        # constant offset of the window origin
    loop_vars: tuple[str | None, ...]  # loop index driving each dimension

    @property
    def elems_per_word(self) -> int:
        return self.bus_width // self.data_width

    @property
    def taps(self) -> int:
        n = 1
        for w in self.shape:
            n *= w
        return n


def detect_window(sk: ScalarizedKernel, array: str, bus_width: int,
                  ) -> WindowSpec:
    """Derive the window geometry of `array` from the scalarized loads."""
    loads = [ld for ld in sk.loads if ld.array == array]
    if not loads:
        raise NonUniformPattern(f"array '{array}' has no loads")
    ndim = len(loads[0].dims)
    data_width = loads[0].ctype.width

    shape, stride, base, loop_vars = [], [], [], []
    step_of = {ix.var: ix.step for ix in sk.loop.indices}
    for d in range(ndim):
        pats = {(ld.dims[d].var, ld.dims[d].coeff) for ld in loads}
        if len(pats) != 1:
            raise NonUniformPattern(
                f"loads of '{array}' disagree on dimension {d}"
                f" index coefficients")
        var, coeff = next(iter(pats))
        consts = [ld.dims[d].const for ld in loads]
        lo, hi = min(consts), max(consts)
        shape.append(hi - lo + 1)
        base.append(lo)
        loop_vars.append(var)
        stride.append(coeff * step_of.get(var, 0) if var else 0)

    if ndim == 2:
        order = {ix.var: k for k, ix in enumerate(sk.loop.indices)}
        r_var, c_var = loop_vars
        if (r_var and c_var and order.get(r_var, 0) > order.get(c_var, 0)):
            raise NonUniformPattern(
                f"'{array}' is accessed column-major; row-major windows only")

    eff_bus = bus_width
    if eff_bus < data_width:
        eff_bus = -(-data_width // 8) * 8
    if eff_bus % 8 != 0:
        raise NonUniformPattern(f"bus width {eff_bus} is not a multiple of 8")
    return WindowSpec(array, tuple(shape), tuple(stride), data_width,
                      eff_bus, tuple(base), tuple(loop_vars))


# --- scalarized form as source (Figure-style round trip) ------------------------


def scalarized_to_kernel(sk: ScalarizedKernel, original: KernelAst) -> KernelAst:
    """Reconstruct a KernelAst in the classic scalar-replaced shape: loads
    hoisted at the top of the loop body, compute in the middle, stores at
    the end.  Re-running scalar_replace on it yields an equal fragment."""
    def dim_expr(d: AccessDim) -> Expr:
        if d.var is None:
            return IntLit(d.const)
        term: Expr = VarRef(d.var)
        if d.coeff != 1:
            term = Binary("*", IntLit(d.coeff), term)
        if d.const:
            term = Binary("+", term, IntLit(d.const))
        return term

    body: list[Stmt] = []
    for ld in sk.loads:
        body.append(VarDecl(ld.scalar, ld.ctype, None))
        body.append(Assign(VarRef(ld.scalar),
                           ArrayRef(ld.array, tuple(dim_expr(d)
                                                    for d in ld.dims))))
    # the `_prev`/`_next` alias statements are re-introduced when the
    # reconstruction is scalarized again, so strip them here
    nfb = 2 * len(sk.feedbacks)
    inner_compute = sk.compute[nfb:len(sk.compute) - nfb or None]
    body.extend(inner_compute)
    out_params = {p.name for p in original.params if p.direction == "out"}
    for st in sk.stores:
        if st.array in out_params:
            body.append(Assign(Deref(st.array), VarRef(st.scalar)))
        else:
            body.append(Assign(ArrayRef(st.array,
                                        tuple(dim_expr(d) for d in st.dims)),
                               VarRef(st.scalar)))

    stmts: list[Stmt] = []
    for fb in sk.feedbacks:
        stmts.append(VarDecl(fb.var, fb.ctype, IntLit(fb.init)))
    inner: tuple[Stmt, ...] = tuple(body)
    for ix in reversed(sk.loop.indices):
        inner = (For(ix.var, IntLit(ix.lower), "<",
                     IntLit(ix.lower + ix.count * ix.step), IntLit(ix.step),
                     inner),)
    stmts.extend(inner)
    return dataclasses.replace(original, body=tuple(stmts), helpers=())
