"""Golden reference interpreter for the accepted C dialect.

Defines the ground-truth semantics every other component is tested
against: sequential statement execution, exact integer expression
arithmetic, and two's-complement wraparound at every assignment to a
declared width.  Memory cells hold raw bit patterns; elements are
reinterpreted per the declared element type on load.

Division and right shift round toward negative infinity (divisors are
restricted to powers of two, making them arithmetic shifts).
"""

from __future__ import annotations

from .ast_nodes import (
    ArrayRef, Assign, Binary, Call, ConstTable, Deref, Expr, For, If, IntLit,
    KernelAst, LoadPrev, LutExpr, Return, ScalarType, Select, Stmt, StoreNext,
    Unary, VarDecl, VarRef,
)
from .errors import OracleError, VectorShapeError
from .frontend import apply_binop


def _raw(value: int, width: int) -> int:
    return value & ((1 << width) - 1)


def _typed(raw: int, ctype: ScalarType) -> int:
    return ctype.wrap(raw)


class _ReturnSignal(Exception):
    pass


def interpret_oracle(kernel: KernelAst,
                     memories: dict[str, list[int]],
                     scalars: dict[str, int] | None = None,
                     lut_tables: dict[str, tuple[list[int], ScalarType]] | None = None,
                     ) -> dict[str, list]:
    """Interpret `kernel` over the given inputs.

    `memories` maps each input array to a flat row-major element list
    (values may be given signed or as raw bit patterns).  Returns one flat
    list per output (arrays and pointer outputs alike); cells the kernel
    never wrote are None.
    """
    scalars = scalars or {}
    lut_tables = lut_tables or {}
    arrays = {a.name: a for a in kernel.arrays}
    tables = {s.name: s for s in kernel.body if isinstance(s, ConstTable)}
    helpers = {h.name: h for h in kernel.helpers}

    in_mem: dict[str, list[int]] = {}
    out_mem: dict[str, list] = {}
    for a in kernel.arrays:
        size = 1
        for e in a.extents:
            size *= e
        if a.direction == "in":
            if a.name not in memories:
                raise VectorShapeError(f"missing input array '{a.name}'")
            data = memories[a.name]
            if len(data) != size:
                raise VectorShapeError(
                    f"array '{a.name}' expects {size} elements,"
                    f" got {len(data)}")
            lo = -(1 << (a.element.width - 1)) if a.element.signed else 0
            hi = (1 << a.element.width) - 1
            for v in data:
                if not (lo <= v <= hi):
                    raise VectorShapeError(
                        f"value {v} does not fit {a.element.name()}"
                        f" element of '{a.name}'")
            in_mem[a.name] = [_raw(v, a.element.width) for v in data]
        else:
            out_mem[a.name] = [None] * size

    env: dict[str, int] = {}
    for p in kernel.params:
        if p.direction == "in":
            if p.name not in scalars:
                raise VectorShapeError(f"missing scalar input '{p.name}'")
            env[p.name] = p.ctype.wrap(scalars[p.name])
        else:
            out_mem[p.name] = [None]

    types: dict[str, ScalarType] = {p.name: p.ctype for p in kernel.params}

    def flat_index(name: str, idx_values: list[int], extents) -> int:
        if len(idx_values) != len(extents):
            raise OracleError(
                f"'{name}' indexed with {len(idx_values)} subscripts")
        flat = 0
        for v, e in zip(idx_values, extents):
            if not (0 <= v < e):
                raise OracleError(
                    f"subscript {v} out of bounds for '{name}' extent {e}")
            flat = flat * e + v
        return flat

    def eval_expr(e: Expr) -> int:
        if isinstance(e, IntLit):
            return e.value
        if isinstance(e, VarRef):
            if e.name not in env:
                raise OracleError(f"read of uninitialized '{e.name}'")
            return env[e.name]
        if isinstance(e, ArrayRef):
            idx = [eval_expr(i) for i in e.indices]
            if e.name in tables:
                t = tables[e.name]
                return t.values[flat_index(e.name, idx, t.extents)]
            if e.name in arrays and arrays[e.name].direction == "in":
                a = arrays[e.name]
                raw = in_mem[e.name][flat_index(e.name, idx, a.extents)]
                return _typed(raw, a.element)
            raise OracleError(f"load from non-input array '{e.name}'")
        if isinstance(e, Binary):
            return apply_binop(e.op, eval_expr(e.left), eval_expr(e.right))
        if isinstance(e, Unary):
            v = eval_expr(e.operand)
            return -v if e.op == "-" else int(v == 0)
        if isinstance(e, Select):
            return (eval_expr(e.if_true) if eval_expr(e.cond) != 0
                    else eval_expr(e.if_false))
        if isinstance(e, LutExpr):
            if e.table not in lut_tables:
                raise OracleError(f"unbound lookup table '{e.table}'")
            contents, dtype = lut_tables[e.table]
            idx = eval_expr(e.index)
            if not (0 <= idx < len(contents)):
                raise OracleError(
                    f"lookup index {idx} outside table '{e.table}'")
            return _typed(contents[idx], dtype)
        if isinstance(e, LoadPrev):
            if e.var not in env:
                raise OracleError(f"ROCCC_load_prev of unset '{e.var}'")
            return env[e.var]
        if isinstance(e, Call):
            h = helpers.get(e.name)
            if h is None:
                raise OracleError(f"call to unknown '{e.name}'")
            saved = dict(env)
            for (pname, ptype), arg in zip(h.params, e.args):
                env[pname] = ptype.wrap(eval_expr(arg))
            result = eval_expr(h.body)
            env.clear()
            env.update(saved)
            return result
        raise OracleError(f"unsupported expression {type(e).__name__}")

    def run(stmts):
        for s in stmts:
            if isinstance(s, VarDecl):
                types[s.name] = s.ctype
                if s.init is not None:
                    env[s.name] = s.ctype.wrap(eval_expr(s.init))
            elif isinstance(s, ConstTable):
                pass
            elif isinstance(s, Assign):
                value = eval_expr(s.value)
                t = s.target
                if isinstance(t, VarRef):
                    ctype = types.get(t.name, ScalarType(True, 32))
                    env[t.name] = ctype.wrap(value)
                elif isinstance(t, Deref):
                    p = next(p for p in kernel.params if p.name == t.name)
                    out_mem[t.name][0] = _raw(p.ctype.wrap(value),
                                              p.ctype.width)
                elif isinstance(t, ArrayRef):
                    a = arrays.get(t.name)
                    if a is None or a.direction != "out":
                        raise OracleError(
                            f"store to non-output array '{t.name}'")
                    idx = [eval_expr(i) for i in t.indices]
                    raw = _raw(a.element.wrap(value), a.element.width)
                    out_mem[t.name][flat_index(t.name, idx, a.extents)] = raw
            elif isinstance(s, StoreNext):
                ctype = types.get(s.var, ScalarType(True, 32))
                env[s.var] = ctype.wrap(eval_expr(s.value))
            elif isinstance(s, For):
                start = eval_expr(s.start)
                env[s.var] = start
                types[s.var] = ScalarType(True, 32)
                while True:
                    bound = eval_expr(s.bound)
                    cur = env[s.var]
                    if not (cur < bound if s.cmp == "<" else cur <= bound):
                        break
                    run(s.body)
                    env[s.var] = cur + eval_expr(s.step)
            elif isinstance(s, If):
                run(s.then_body if eval_expr(s.cond) != 0 else s.else_body)
            elif isinstance(s, Return):
                raise _ReturnSignal()
            else:
                raise OracleError(
                    f"unsupported statement {type(s).__name__}")

    try:
        run(kernel.body)
    except _ReturnSignal:
        pass
    return out_mem
