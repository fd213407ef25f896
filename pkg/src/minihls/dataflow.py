"""SSA dataflow graph: lowering, bit-width inference, pipeline scheduling.

Every value is defined exactly once; the graph is acyclic except through
LPR/SNX feedback pairs.  Widths follow fixed rules from port sizes and
opcodes (add/sub grow by one, multiply sums widths, constants count their
own bits); feedback registers stay at their declared C width with
wraparound.  Scheduling latches every operator once (ASAP), inserts COPY
delay registers to balance converging paths, and closes each feedback
cycle combinationally so the initiation interval is one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .ast_nodes import (
    ArrayRef, Assign, Binary, Expr, If, IntLit, LoadPrev, LutExpr, ScalarType,
    Select, Stmt, Unary, VarDecl, VarRef,
)
from .errors import (
    FeedbackTooDeep, InitFileError, LoweringError, WidthOverflow,
)
from .frontend import apply_binop
from .luts import LutSpec
from .transforms import ScalarizedKernel

BINOP_OPCODES = {
    "+": "ADD", "-": "SUB", "*": "MUL", "&": "AND", "|": "OR", "^": "XOR",
    "<<": "SHL", ">>": "SHR", "==": "EQ", "!=": "NE", "<": "LT", "<=": "LE",
    ">": "GT", ">=": "GE",
}

COMPARISONS = {"EQ", "NE", "LT", "LE", "GT", "GE"}


@dataclass(frozen=True)
class Ref:
    id: int


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Port:
    name: str


Operand = object  # Ref | Const | Port


@dataclass
class Node:
    id: int
    opcode: str
    operands: tuple
    width: int | None = None
    signed: bool | None = None
    stage: int | None = None
    latched: bool | None = None
    # opcode-specific payload
    var: str | None = None        # LPR/SNX feedback variable
    init: int | None = None       # LPR reset value
    table: str | None = None      # LUT table name
    lut: LutSpec | None = None    # resolved by bind_lut
    target: ScalarType | None = None  # COPY resize target


@dataclass(frozen=True)
class InPort:
    name: str
    width: int
    signed: bool
    kind: str  # 'window' (per-firing) or 'scalar' (run-constant)


@dataclass
class DataflowGraph:
    nodes: list[Node] = field(default_factory=list)
    inputs: list[InPort] = field(default_factory=list)
    outputs: list[tuple[str, object]] = field(default_factory=list)
    feedback_pairs: list[tuple[int, int]] = field(default_factory=list)
    depth: int | None = None

    def port(self, name: str) -> InPort:
        for p in self.inputs:
            if p.name == name:
                return p
        raise KeyError(name)

    def add(self, opcode: str, operands: tuple, **kw) -> Ref:
        node = Node(len(self.nodes), opcode, operands, **kw)
        self.nodes.append(node)
        return Ref(node.id)

    def node_of(self, ref: Ref) -> Node:
        return self.nodes[ref.id]

    def opcode_census(self) -> dict[str, int]:
        census: dict[str, int] = {}
        for n in self.nodes:
            census[n.opcode] = census.get(n.opcode, 0) + 1
        return census

    def check_ssa(self):
        """Every node id defined exactly once; operands reference earlier
        definitions only (except the implicit SNX->LPR feedback edges)."""
        seen = set()
        for i, n in enumerate(self.nodes):
            if n.id in seen:
                raise LoweringError(f"node id {n.id} defined twice")
            seen.add(n.id)
            if n.id != i:
                raise LoweringError(f"node id {n.id} out of place")
            for op in n.operands:
                if isinstance(op, Ref) and op.id >= n.id:
                    raise LoweringError(
                        f"node {n.id} uses forward reference {op.id}")

    def toposort_ok(self) -> bool:
        """The graph without SNX->LPR edges is a DAG (ids are topological)."""
        try:
            self.check_ssa()
            return True
        except LoweringError:
            return False


def const_width(v: int) -> tuple[int, bool]:
    """Bits needed to represent a constant (two's complement if negative)."""
    if v >= 0:
        return max(1, v.bit_length()), False
    return (-v - 1).bit_length() + 1 if v != -1 else 1, True


def _promote(wa, sa, wb, sb) -> tuple[int, int, bool]:
    """Mixed-signedness rule: an unsigned operand meeting a signed one is
    reinterpreted signed at its own width + 1."""
    if sa == sb:
        return wa, wb, sa
    if not sa:
        wa += 1
    if not sb:
        wb += 1
    return wa, wb, True


def rule_width(opcode: str, a: tuple[int, bool], b: tuple[int, bool] | None,
               shift: int | None = None) -> tuple[int, bool]:
    """(width, signed) of a node's result from its operand types."""
    wa, sa = a
    if opcode == "COPY":
        return wa, sa
    if opcode == "NOT":
        return wa, sa
    if opcode in COMPARISONS:
        return 1, False
    if opcode == "SHL":
        return wa + (shift or 0), sa
    if opcode == "SHR":
        return wa, sa
    wb, sb = b
    wa2, wb2, signed = _promote(wa, sa, wb, sb)
    if opcode == "ADD":
        return max(wa2, wb2) + 1, signed
    if opcode == "SUB":
        return max(wa2, wb2) + 1, True
    if opcode == "MUL":
        return wa2 + wb2, signed
    if opcode in ("AND", "OR", "XOR"):
        return max(wa2, wb2), signed
    if opcode == "SELECT":
        return max(wa2, wb2), signed
    raise LoweringError(f"no width rule for opcode {opcode}")


# --- lowering ------------------------------------------------------------------


def lower(sk: ScalarizedKernel,
          lut_specs: dict[str, LutSpec] | None = None) -> DataflowGraph:
    """Lower the branch-free compute fragment to an SSA dataflow graph.

    The fragment must already be predicated (if-converted); loops and
    branches are rejected here.  `lut_specs` supplies table geometries so
    lookup results have widths (tables referenced without a spec fail
    here with the unbound-table diagnostic).
    """
    g = DataflowGraph()
    types = sk.local_types
    lut_specs = lut_specs or {}

    for ld in sk.loads:
        g.inputs.append(InPort(ld.scalar, ld.ctype.width, ld.ctype.signed,
                               "window"))
    for name, ctype in sk.scalar_ins:
        g.inputs.append(InPort(name, ctype.width, ctype.signed, "scalar"))

    env: dict[str, object] = {p.name: Port(p.name) for p in g.inputs}
    lpr_of: dict[str, Ref] = {}
    for fb in sk.feedbacks:
        ref = g.add("LPR", (), width=fb.ctype.width, signed=fb.ctype.signed,
                    var=fb.var, init=fb.init)
        lpr_of[fb.var] = ref
        env[fb.prev] = ref

    def operand_type(op) -> tuple[int, bool]:
        if isinstance(op, Const):
            return const_width(op.value)
        if isinstance(op, Port):
            p = g.port(op.name)
            return p.width, p.signed
        n = g.node_of(op)
        return n.width, n.signed

    def emit(opcode: str, operands: tuple, **kw) -> object:
        # provisional width so assignment wrapping can be decided on the fly
        if all(isinstance(o, Const) for o in operands) and opcode != "SELECT":
            raise LoweringError(f"unfolded constant {opcode} node")
        ref = g.add(opcode, operands, **kw)
        node = g.node_of(ref)
        a = operand_type(operands[0]) if operands else (1, False)
        b = operand_type(operands[1]) if len(operands) > 1 else None
        shift = None
        if opcode in ("SHL", "SHR"):
            if not isinstance(operands[1], Const):
                raise LoweringError("shift by a non-constant amount")
            shift = operands[1].value
        if opcode == "SELECT":
            a = operand_type(operands[1])
            b = operand_type(operands[2])
        node.width, node.signed = rule_width(opcode, a, b, shift)
        return ref

    def value_range(op) -> tuple[int, int]:
        w, s = operand_type(op)
        if isinstance(op, Const):
            return op.value, op.value
        lo = -(1 << (w - 1)) if s else 0
        hi = (1 << (w - 1)) - 1 if s else (1 << w) - 1
        return lo, hi

    def wrap_to(op, ctype: ScalarType):
        """Insert an explicit resize COPY when the value may not fit."""
        if isinstance(op, Const):
            return Const(ctype.wrap(op.value))
        lo, hi = value_range(op)
        if ctype.min <= lo and hi <= ctype.max:
            return op
        ref = emit("COPY", (op,), width=ctype.width, signed=ctype.signed,
                   target=ctype)
        note_level(ref, (op,), latched=False)
        return ref

    def as_cond(op):
        w, _ = operand_type(op)
        if w == 1:
            return op
        return emit_leveled("NE", (op, Const(0)))

    levels: dict[int, int] = {}

    def level_of(op) -> int:
        if isinstance(op, Ref):
            return levels.get(op.id, 0)
        return 0

    def note_level(ref, operands, latched=True):
        if isinstance(ref, Ref):
            base = max((level_of(o) for o in operands), default=0)
            levels[ref.id] = base + (1 if latched else 0)
        return ref

    def emit_leveled(opcode, operands, **kw):
        ref = emit(opcode, operands, **kw)
        note_level(ref, operands, latched=opcode != "COPY")
        return ref

    def reduce_chain(op: str, terms: list):
        """Balance an associative chain into a minimum-depth tree, pairing
        the earliest-available values first (products arrive after raw
        inputs, so the tree leans accordingly)."""
        import heapq
        heap = [(level_of(t), k, t) for k, t in enumerate(terms)]
        heapq.heapify(heap)
        counter = len(terms)
        while len(heap) > 1:
            la, _, a = heapq.heappop(heap)
            lb, _, b = heapq.heappop(heap)
            ref = emit_leveled(op, (a, b))
            heapq.heappush(heap, (level_of(ref), counter, ref))
            counter += 1
        return heap[0][2]

    def reduce_additive(terms: list):
        """terms: [(sign, operand)]; combined with ADD/SUB by sign."""
        import heapq
        heap = [(level_of(t), k, sign, t)
                for k, (sign, t) in enumerate(terms)]
        heapq.heapify(heap)
        counter = len(terms)
        while len(heap) > 1:
            la, _, sa, a = heapq.heappop(heap)
            lb, _, sb, b = heapq.heappop(heap)
            if sa > 0 and sb > 0:
                ref, sign = emit_leveled("ADD", (a, b)), 1
            elif sa > 0 > sb:
                ref, sign = emit_leveled("SUB", (a, b)), 1
            elif sb > 0 > sa:
                ref, sign = emit_leveled("SUB", (b, a)), 1
            else:
                ref, sign = emit_leveled("ADD", (a, b)), -1
            heapq.heappush(heap, (level_of(ref), counter, sign, ref))
            counter += 1
        _, _, sign, ref = heap[0]
        if sign < 0:
            ref = emit_leveled("SUB", (Const(0), ref))
        return ref

    def additive_terms(e: Expr, sign: int, out: list):
        if isinstance(e, Binary) and e.op in ("+", "-"):
            additive_terms(e.left, sign, out)
            additive_terms(e.right, sign if e.op == "+" else -sign, out)
        else:
            out.append((sign, e))

    def chain_terms(e: Expr, op: str, out: list):
        if isinstance(e, Binary) and e.op == op:
            chain_terms(e.left, op, out)
            chain_terms(e.right, op, out)
        else:
            out.append(e)

    def eval_expr(e: Expr):
        if isinstance(e, IntLit):
            return Const(e.value)
        if isinstance(e, VarRef):
            if e.name not in env:
                raise LoweringError(f"use of undefined value '{e.name}'")
            return env[e.name]
        if isinstance(e, Unary):
            v = eval_expr(e.operand)
            if isinstance(v, Const):
                return Const(-v.value if e.op == "-" else int(v.value == 0))
            if e.op == "-":
                return emit_leveled("SUB", (Const(0), v))
            return emit_leveled("EQ", (v, Const(0)))
        if isinstance(e, Binary):
            if e.op in ("+", "-"):
                raw_terms: list = []
                additive_terms(e, 1, raw_terms)
                if len(raw_terms) > 2:
                    values = [(s, eval_expr(t)) for s, t in raw_terms]
                    consts = sum(s * v.value for s, v in values
                                 if isinstance(v, Const))
                    rest = [(s, v) for s, v in values
                            if not isinstance(v, Const)]
                    if consts:
                        rest.append((1, Const(consts)) if consts > 0
                                    else (-1, Const(-consts)))
                    if not rest:
                        return Const(consts)
                    return reduce_additive(rest)
            if e.op in ("*", "&", "|", "^"):
                raw: list = []
                chain_terms(e, e.op, raw)
                if len(raw) > 2:
                    values = [eval_expr(t) for t in raw]
                    consts = [v.value for v in values if isinstance(v, Const)]
                    rest = [v for v in values if not isinstance(v, Const)]
                    if consts:
                        merged = consts[0]
                        for v in consts[1:]:
                            merged = apply_binop(e.op, merged, v)
                        if not rest:
                            return Const(merged)
                        identity = {"*": 1, "|": 0, "^": 0}.get(e.op)
                        if merged != identity:
                            rest.append(Const(merged))
                    if len(rest) == 1:
                        return rest[0]
                    return reduce_chain(BINOP_OPCODES[e.op], rest)
            a = eval_expr(e.left)
            b = eval_expr(e.right)
            if isinstance(a, Const) and isinstance(b, Const):
                return Const(apply_binop(e.op, a.value, b.value))
            if e.op == "/":
                k = _pow2_exponent(b, "/")
                return emit_leveled("SHR", (a, Const(k)))
            if e.op == "%":
                k = _pow2_exponent(b, "%")
                _, sa = operand_type(a)
                if sa:
                    raise LoweringError(
                        "'%' on a signed value is not supported")
                return emit_leveled("AND", (a, Const((1 << k) - 1)))
            opcode = BINOP_OPCODES[e.op]
            if opcode in ("SHL", "SHR") and not isinstance(b, Const):
                raise LoweringError("shift by a non-constant amount")
            return emit_leveled(opcode, (a, b))
        if isinstance(e, Select):
            cond = as_cond(eval_expr(e.cond))
            t = eval_expr(e.if_true)
            f = eval_expr(e.if_false)
            return emit_leveled("SELECT", (cond, t, f))
        if isinstance(e, LutExpr):
            idx = eval_expr(e.index)
            if isinstance(idx, Const):
                raise LoweringError(
                    f"lookup in '{e.table}' with a constant index"
                    " (fold the table instead)")
            if e.table not in lut_specs:
                raise InitFileError(f"unbound lookup table '{e.table}'")
            spec = lut_specs[e.table]
            ref = g.add("LUT", (idx,), width=spec.data_width,
                        signed=spec.signed, table=e.table, lut=spec)
            note_level(ref, (idx,))
            return ref
        if isinstance(e, LoadPrev):
            raise LoweringError(
                "feedback intrinsic survived scalar replacement")
        if isinstance(e, (ArrayRef,)):
            raise LoweringError("array access survived scalar replacement")
        raise LoweringError(f"cannot lower {type(e).__name__}")

    for s in sk.compute:
        if isinstance(s, VarDecl):
            if s.init is not None:
                env[s.name] = wrap_to(eval_expr(s.init), s.ctype)
        elif isinstance(s, Assign):
            if not isinstance(s.target, VarRef):
                raise LoweringError("non-scalar assignment in compute")
            ctype = types.get(s.target.name)
            if ctype is None:
                raise LoweringError(
                    f"assignment to undeclared '{s.target.name}'")
            env[s.target.name] = wrap_to(eval_expr(s.value), ctype)
        elif isinstance(s, If):
            raise LoweringError(
                "branch reached lowering; run predication first")
        else:
            raise LoweringError(
                f"cannot lower statement {type(s).__name__}")

    for fb in sk.feedbacks:
        if fb.next not in env:
            raise LoweringError(f"feedback '{fb.var}' next value undefined")
        val = env[fb.next]
        snx = g.add("SNX", (val,), width=fb.ctype.width,
                    signed=fb.ctype.signed, var=fb.var)
        g.feedback_pairs.append((lpr_of[fb.var].id, snx.id))
        env[fb.next] = snx

    for st in sk.stores:
        if st.scalar not in env:
            raise LoweringError(f"store scalar '{st.scalar}' undefined")
        g.outputs.append((st.scalar, env[st.scalar]))

    _reassociate(g)
    _eliminate_dead(g)
    g.check_ssa()
    return g


def _node_levels(g: DataflowGraph) -> dict[int, int]:
    levels: dict[int, int] = {}
    for n in g.nodes:
        ops = [levels.get(op.id, 0) for op in n.operands if isinstance(op, Ref)]
        base = max(ops, default=0)
        levels[n.id] = base + (0 if n.opcode in ("COPY", "LPR", "SNX") else 1)
    return levels


def _reassociate(g: DataflowGraph):
    """Rebalance add/sub chains that accumulate across statements (e.g.
    unrolled reductions) into minimum-depth trees, pairing earliest-ready
    values first.  Exact-integer addition commutes, so values are
    unchanged; wrap points (COPY resizes) stop the collection."""
    import heapq

    uses: dict[int, int] = {}
    for n in g.nodes:
        for op in n.operands:
            if isinstance(op, Ref):
                uses[op.id] = uses.get(op.id, 0) + 1
    for _name, op in g.outputs:
        if isinstance(op, Ref):
            uses[op.id] = uses.get(op.id, 0) + 1

    consumers: dict[int, list[int]] = {}
    for n in g.nodes:
        for op in n.operands:
            if isinstance(op, Ref):
                consumers.setdefault(op.id, []).append(n.id)

    def absorbed(nid: int) -> bool:
        n = g.nodes[nid]
        if n.opcode not in ("ADD", "SUB") or uses.get(nid, 0) != 1:
            return False
        c = consumers.get(nid, [])
        return len(c) == 1 and g.nodes[c[0]].opcode in ("ADD", "SUB")

    levels = _node_levels(g)
    replacements: dict[int, Ref] = {}

    def leaves_of(nid: int, sign: int, out: list):
        n = g.nodes[nid]
        for k, op in enumerate(n.operands):
            term_sign = sign if (n.opcode == "ADD" or k == 0) else -sign
            if isinstance(op, Ref) and absorbed(op.id):
                leaves_of(op.id, term_sign, out)
            else:
                out.append((term_sign, op))

    def level_of(op) -> int:
        if isinstance(op, Ref):
            return levels.get(op.id, 0)
        return 0

    for n in list(g.nodes):
        if n.opcode not in ("ADD", "SUB") or absorbed(n.id):
            continue
        leaves: list = []
        leaves_of(n.id, 1, leaves)
        if len(leaves) <= 2:
            continue
        const_sum = sum(s * op.value for s, op in leaves
                        if isinstance(op, Const))
        terms = [(s, op) for s, op in leaves if not isinstance(op, Const)]
        if const_sum:
            terms.append((1, Const(const_sum)) if const_sum > 0
                         else (-1, Const(-const_sum)))
        heap = [(level_of(op), k, s, op) for k, (s, op) in enumerate(terms)]
        heapq.heapify(heap)
        counter = len(terms)
        while len(heap) > 1:
            la, _, sa, a = heapq.heappop(heap)
            lb, _, sb, b = heapq.heappop(heap)
            if sa > 0 and sb > 0:
                opc, ops, sign = "ADD", (a, b), 1
            elif sa > 0 > sb:
                opc, ops, sign = "SUB", (a, b), 1
            elif sb > 0 > sa:
                opc, ops, sign = "SUB", (b, a), 1
            else:
                opc, ops, sign = "ADD", (a, b), -1
            ref = g.add(opc, ops)
            levels[ref.id] = max(level_of(a), level_of(b)) + 1
            heapq.heappush(heap, (levels[ref.id], counter, sign, ref))
            counter += 1
        _, _, sign, ref = heap[0]
        if sign < 0:
            ref = g.add("SUB", (Const(0), ref))
            levels[ref.id] = level_of(heap[0][3]) + 1
        if isinstance(ref, Const):
            continue
        replacements[n.id] = ref

    if not replacements:
        return

    def fix(op):
        if isinstance(op, Ref) and op.id in replacements:
            return replacements[op.id]
        return op

    for n in g.nodes:
        if n.id not in replacements:
            n.operands = tuple(fix(op) for op in n.operands)
    g.outputs = [(name, fix(op)) for name, op in g.outputs]
    _renumber(g)


def _eliminate_dead(g: DataflowGraph):
    """Drop nodes unreachable from the outputs and the feedback registers."""
    live: set[int] = set()
    work = [op.id for _n, op in g.outputs if isinstance(op, Ref)]
    work += [s for _l, s in g.feedback_pairs]
    work += [l for l, _s in g.feedback_pairs]
    while work:
        nid = work.pop()
        if nid in live:
            continue
        live.add(nid)
        for op in g.nodes[nid].operands:
            if isinstance(op, Ref):
                work.append(op.id)
    if len(live) == len(g.nodes):
        return
    remap: dict[int, int] = {}
    new_nodes = []
    for n in g.nodes:
        if n.id in live:
            remap[n.id] = len(new_nodes)
            new_nodes.append(n)
    for n in new_nodes:
        n.id = remap[n.id]
        n.operands = tuple(Ref(remap[op.id]) if isinstance(op, Ref) else op
                           for op in n.operands)
    g.nodes = new_nodes
    g.outputs = [(name, Ref(remap[op.id]) if isinstance(op, Ref) else op)
                 for name, op in g.outputs]
    g.feedback_pairs = [(remap[l], remap[s]) for l, s in g.feedback_pairs]


def _pow2_exponent(b, op: str) -> int:
    if not isinstance(b, Const) or b.value <= 0 or b.value & (b.value - 1):
        raise LoweringError(f"'{op}' only by constant powers of two")
    return b.value.bit_length() - 1


# --- LUT binding -----------------------------------------------------------------


def bind_lut(graph: DataflowGraph, spec: LutSpec) -> DataflowGraph:
    """Attach resolved table contents to every LUT node naming `spec`."""
    found = False
    for n in graph.nodes:
        if n.opcode == "LUT" and n.table == spec.name:
            n.lut = spec
            found = True
    if not found:
        raise InitFileError(f"no lookup of table '{spec.name}' in this kernel")
    return graph


def unbound_tables(graph: DataflowGraph) -> list[str]:
    return sorted({n.table for n in graph.nodes
                   if n.opcode == "LUT" and n.lut is None})


# --- width inference ---------------------------------------------------------------


def infer_widths(graph: DataflowGraph) -> DataflowGraph:
    """Assign (width, signed) per node by the fixed rules; feedback
    registers keep their declared width (wraparound), everything else must
    stay within 64 bits."""
    def operand_type(op) -> tuple[int, bool]:
        if isinstance(op, Const):
            return const_width(op.value)
        if isinstance(op, Port):
            p = graph.port(op.name)
            return p.width, p.signed
        n = graph.nodes[op.id]
        if n.width is None:
            raise LoweringError(f"operand of node {op.id} not yet inferred")
        return n.width, n.signed

    for n in graph.nodes:
        if n.opcode in ("LPR", "SNX"):
            continue  # declared width, wraparound semantics
        if n.opcode == "LUT":
            if n.lut is None:
                raise InitFileError(f"unbound lookup table '{n.table}'")
            iw, _ = operand_type(n.operands[0])
            if iw > n.lut.address_width:
                raise InitFileError(
                    f"table '{n.table}': index is {iw} bits, address is"
                    f" {n.lut.address_width}")
            n.width, n.signed = n.lut.data_width, n.lut.signed
            continue
        if n.opcode == "COPY" and n.target is not None:
            n.width, n.signed = n.target.width, n.target.signed
            continue
        a = operand_type(n.operands[0]) if n.operands else (1, False)
        b = operand_type(n.operands[1]) if len(n.operands) > 1 else None
        shift = None
        if n.opcode in ("SHL", "SHR"):
            shift = n.operands[1].value
            b = None
        if n.opcode == "SELECT":
            a = operand_type(n.operands[1])
            b = operand_type(n.operands[2])
        n.width, n.signed = rule_width(n.opcode, a, b, shift)
        if n.width > 64:
            raise WidthOverflow(
                f"node {n.id} ({n.opcode}) needs {n.width} bits (cap 64)")
    return graph


# --- scheduling --------------------------------------------------------------------


def feedback_cycle_nodes(graph: DataflowGraph) -> set[int]:
    """Nodes on any LPR -> ... -> SNX path (the feedback combinational
    bodies).  Interlocked feedbacks merge into one component."""
    if not graph.feedback_pairs:
        return set()
    succs: dict[int, list[int]] = {n.id: [] for n in graph.nodes}
    for n in graph.nodes:
        for op in n.operands:
            if isinstance(op, Ref):
                succs[op.id].append(n.id)
    lprs = {l for l, _ in graph.feedback_pairs}
    snxs = {s for _, s in graph.feedback_pairs}

    fwd: set[int] = set()
    work = list(lprs)
    while work:
        cur = work.pop()
        if cur in fwd:
            continue
        fwd.add(cur)
        work.extend(succs[cur])
    back: set[int] = set()
    work = list(snxs)
    while work:
        cur = work.pop()
        if cur in back:
            continue
        back.add(cur)
        for op in graph.nodes[cur].operands:
            if isinstance(op, Ref):
                work.append(op.id)
    return fwd & back


def schedule(graph: DataflowGraph, max_feedback_depth: int = 8,
             ) -> DataflowGraph:
    """ASAP staging with one stage per latched operator, COPY delay
    registers on converging paths, and combinational feedback bodies."""
    cycle = feedback_cycle_nodes(graph)
    for nid in cycle:
        if graph.nodes[nid].opcode == "LUT":
            raise FeedbackTooDeep(
                "lookup table on a feedback cycle cannot close in one stage")

    arrival: dict[int, int] = {}
    delays: dict[tuple, object] = {}

    def operand_arrival(op) -> int | None:
        """None = always available (constants, run-constant scalar ports)."""
        if isinstance(op, Const):
            return None
        if isinstance(op, Port):
            return 0 if graph.port(op.name).kind == "window" else None
        return arrival[op.id]

    def delayed(op, by: int):
        """Operand delayed by `by` register stages (chains are shared)."""
        if by <= 0:
            return op
        key = (op, by)
        if key in delays:
            return delays[key]
        prev = delayed(op, by - 1)
        w, s = _op_type(graph, prev)
        ref = graph.add("COPY", (prev,), width=w, signed=s)
        node = graph.node_of(ref)
        node.latched = True
        base = operand_arrival(op)
        node.stage = (base or 0) + by
        arrival[ref.id] = node.stage
        delays[key] = ref
        return ref

    def balance(node: Node, target: int, skip=()):
        ops = list(node.operands)
        for k, op in enumerate(ops):
            if k in skip:
                continue
            a = operand_arrival(op)
            if a is not None and a < target:
                ops[k] = delayed(op, target - a)
        node.operands = tuple(ops)

    # needs_fb: transitively depends on a feedback register or cycle node
    needs_fb: set[int] = set(cycle)
    for n in graph.nodes:
        if n.opcode == "LPR":
            needs_fb.add(n.id)
    for n in graph.nodes:
        if n.id in needs_fb:
            continue
        if any(isinstance(op, Ref) and op.id in needs_fb for op in n.operands):
            needs_fb.add(n.id)

    def place(n: Node):
        if n.opcode == "SNX":
            return  # placed with its cycle group
        arrivals = [operand_arrival(op) for op in n.operands]
        known = [a for a in arrivals if a is not None]
        base = max(known) if known else 0
        if n.opcode == "COPY" and n.target is not None:
            balance(n, base)
            n.latched = False
            n.stage = base
        elif n.opcode in ("LUT",) or n.opcode in BINOP_OPCODES.values() \
                or n.opcode in ("SELECT", "NOT"):
            balance(n, base)
            n.latched = True
            n.stage = base + 1
        else:
            raise LoweringError(f"cannot schedule opcode {n.opcode}")
        arrival[n.id] = n.stage

    # pass 1: nodes independent of feedback
    original = [n for n in graph.nodes]
    for n in original:
        if n.id not in needs_fb:
            place(n)

    # pass 2: feedback groups close combinationally at stage s*
    if cycle or graph.feedback_pairs:
        groups = _feedback_groups(graph, cycle)
        for group_nodes, group_pairs in groups:
            ext_arrivals = [0]
            for nid in group_nodes:
                node = graph.nodes[nid]
                if node.opcode == "LPR":
                    continue
                for op in node.operands:
                    if isinstance(op, Ref) and op.id in group_nodes:
                        continue
                    a = operand_arrival(op)
                    if a is not None:
                        ext_arrivals.append(a)
            s_star = max(ext_arrivals) + 1
            depth = _cycle_comb_depth(graph, group_nodes)
            if depth > max_feedback_depth:
                raise FeedbackTooDeep(
                    f"feedback body has {depth} combinational levels"
                    f" (limit {max_feedback_depth})")
            for nid in sorted(group_nodes):
                node = graph.nodes[nid]
                if node.opcode == "LPR":
                    node.stage = s_star - 1
                    node.latched = False
                    arrival[nid] = s_star - 1
                    continue
                balance(node, s_star - 1,
                        skip=[k for k, op in enumerate(node.operands)
                              if isinstance(op, Ref) and op.id in group_nodes])
                node.stage = s_star
                node.latched = node.opcode == "SNX"
                arrival[nid] = s_star
        # LPRs whose variable has no on-cycle body (next independent of prev)
        for lpr_id, snx_id in graph.feedback_pairs:
            if arrival.get(lpr_id) is None:
                snx = graph.nodes[snx_id]
                a = operand_arrival(snx.operands[0])
                s_star = (a if a is not None else 0) + 1
                lpr = graph.nodes[lpr_id]
                lpr.stage, lpr.latched = s_star - 1, False
                arrival[lpr_id] = s_star - 1
                balance(snx, s_star - 1)
                snx.stage, snx.latched = s_star, True
                arrival[snx_id] = s_star

    # off-cycle consumers of a combinational cycle value must read it
    # through a stage-s* register, or they would see the next firing's sum
    snx_ids = {s for _, s in graph.feedback_pairs}
    lpr_ids = {l for l, _ in graph.feedback_pairs}
    captures: dict[int, Ref] = {}

    def captured(op):
        if not isinstance(op, Ref):
            return op
        nid = op.id
        if nid not in cycle or nid in snx_ids or nid in lpr_ids:
            return op
        if nid not in captures:
            node = graph.nodes[nid]
            cref = graph.add("COPY", (op,), width=node.width,
                             signed=node.signed)
            cnode = graph.node_of(cref)
            cnode.latched = True
            cnode.stage = node.stage
            arrival[cref.id] = node.stage
            captures[nid] = cref
        return captures[nid]

    for n in original:
        if n.stage is None and n.opcode != "SNX" and n.id not in cycle:
            n.operands = tuple(captured(op) for op in n.operands)
    graph.outputs = [(name, captured(op)) for name, op in graph.outputs]

    # pass 3: everything left (consumers of feedback values)
    for n in original:
        if n.stage is None and n.opcode != "SNX":
            place(n)

    # outputs: pad to a common depth, at least one latch
    out_arrivals = []
    for name, op in graph.outputs:
        a = operand_arrival(op)
        out_arrivals.append(a if a is not None else 0)
    depth = max(1, max(out_arrivals, default=1))
    new_outputs = []
    for (name, op), a in zip(graph.outputs, out_arrivals):
        actual = operand_arrival(op)
        if actual is None:
            # constant or run-constant output still gets its output latch
            w, s = _op_type(graph, op)
            ref = graph.add("COPY", (op,), width=w, signed=s)
            node = graph.node_of(ref)
            node.latched, node.stage = True, depth
            arrival[ref.id] = depth
            op = ref
        elif actual < depth:
            op = delayed(op, depth - actual)
        new_outputs.append((name, op))
    graph.outputs = new_outputs
    graph.depth = depth
    _renumber(graph)
    _check_balance(graph)
    graph.check_ssa()
    return graph


def _renumber(graph: DataflowGraph):
    """Delay insertion appends nodes that feed earlier consumers; restore
    topological ids (stable: ties broken by the old numbering)."""
    import heapq

    n = len(graph.nodes)
    succs: dict[int, list[int]] = {i: [] for i in range(n)}
    pending: dict[int, int] = {}
    for node in graph.nodes:
        count = 0
        for op in node.operands:
            if isinstance(op, Ref):
                succs[op.id].append(node.id)
                count += 1
        pending[node.id] = count
    ready = [i for i in range(n) if pending[i] == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        cur = heapq.heappop(ready)
        order.append(cur)
        for nxt in succs[cur]:
            pending[nxt] -= 1
            if pending[nxt] == 0:
                heapq.heappush(ready, nxt)
    assert len(order) == n, "cycle outside feedback pairs"
    remap = {old: new for new, old in enumerate(order)}

    def fix(op):
        return Ref(remap[op.id]) if isinstance(op, Ref) else op

    new_nodes = [graph.nodes[old] for old in order]
    for new_id, node in enumerate(new_nodes):
        node.id = new_id
        node.operands = tuple(fix(op) for op in node.operands)
    graph.nodes = new_nodes
    graph.outputs = [(name, fix(op)) for name, op in graph.outputs]
    graph.feedback_pairs = [(remap[l], remap[s])
                            for l, s in graph.feedback_pairs]


def _op_type(graph, op) -> tuple[int, bool]:
    if isinstance(op, Const):
        return const_width(op.value)
    if isinstance(op, Port):
        p = graph.port(op.name)
        return p.width, p.signed
    n = graph.nodes[op.id]
    return n.width, n.signed


def _feedback_groups(graph, cycle: set[int]):
    """Connected components of cycle nodes, each with its LPR/SNX pairs."""
    pair_of = dict(graph.feedback_pairs)
    adj: dict[int, set[int]] = {nid: set() for nid in cycle}
    for nid in cycle:
        for op in graph.nodes[nid].operands:
            if isinstance(op, Ref) and op.id in cycle:
                adj[nid].add(op.id)
                adj[op.id].add(nid)
    for lpr, snx in graph.feedback_pairs:
        if lpr in cycle and snx in cycle:
            adj[lpr].add(snx)
            adj[snx].add(lpr)
    seen: set[int] = set()
    groups = []
    for nid in sorted(cycle):
        if nid in seen:
            continue
        comp = set()
        work = [nid]
        while work:
            cur = work.pop()
            if cur in comp:
                continue
            comp.add(cur)
            work.extend(adj[cur] - comp)
        seen |= comp
        pairs = [(l, s) for l, s in graph.feedback_pairs
                 if l in comp or s in comp]
        groups.append((comp, pairs))
    return groups


def _cycle_comb_depth(graph, group: set[int]) -> int:
    depth: dict[int, int] = {}
    for nid in sorted(group):
        n = graph.nodes[nid]
        if n.opcode == "LPR":
            depth[nid] = 0
            continue
        ops = [depth.get(op.id, 0) for op in n.operands
               if isinstance(op, Ref) and op.id in group]
        depth[nid] = (max(ops) if ops else 0) + (0 if n.opcode == "SNX" else 1)
    return max(depth.values(), default=0)


def _check_balance(graph: DataflowGraph):
    """Internal invariant: all non-constant operands of every off-cycle
    node arrive at the same stage."""
    cycle = feedback_cycle_nodes(graph)

    def op_stage(op) -> int | None:
        if isinstance(op, Const):
            return None
        if isinstance(op, Port):
            return 0 if graph.port(op.name).kind == "window" else None
        return graph.nodes[op.id].stage

    for n in graph.nodes:
        if n.id in cycle or n.opcode in ("LPR", "SNX"):
            continue
        stages = [op_stage(op) for op in n.operands]
        known = {s for s in stages if s is not None}
        if len(known) > 1:
            raise LoweringError(
                f"unbalanced node {n.id} ({n.opcode}): operand stages {known}")


# --- graph evaluation (used by equivalence and property tests) ---------------------


def evaluate(graph: DataflowGraph, inputs: dict[str, int],
             state: dict[str, int] | None = None, check_widths: bool = True,
             ) -> tuple[dict[str, int], dict[str, int]]:
    """One firing of the dataflow graph with exact integers.

    `state` maps feedback variables to their current (typed) values;
    missing entries use the declared initializer.  Returns (outputs,
    next_state).  With `check_widths`, asserts every non-feedback node
    value fits its inferred width.
    """
    state = dict(state or {})
    values: dict[int, int] = {}

    def op_value(op) -> int:
        if isinstance(op, Const):
            return op.value
        if isinstance(op, Port):
            return inputs[op.name]
        return values[op.id]

    next_state: dict[str, int] = {}
    for n in graph.nodes:
        if n.opcode == "LPR":
            v = state.get(n.var, n.init)
            values[n.id] = v
        elif n.opcode == "SNX":
            ctype = ScalarType(n.signed, n.width)
            v = ctype.wrap(op_value(n.operands[0]))
            values[n.id] = v
            next_state[n.var] = v
        elif n.opcode == "COPY":
            v = op_value(n.operands[0])
            if n.target is not None:
                v = n.target.wrap(v)
            values[n.id] = v
        elif n.opcode == "LUT":
            idx = op_value(n.operands[0])
            assert 0 <= idx < len(n.lut.contents), "LUT index out of range"
            raw = n.lut.contents[idx]
            values[n.id] = ScalarType(n.lut.signed, n.lut.data_width).wrap(raw)
        elif n.opcode == "SELECT":
            c = op_value(n.operands[0])
            values[n.id] = op_value(n.operands[1 if c else 2])
        elif n.opcode == "NOT":
            values[n.id] = int(op_value(n.operands[0]) == 0)
        else:
            op_sym = {v: k for k, v in BINOP_OPCODES.items()}[n.opcode]
            a = op_value(n.operands[0])
            b = op_value(n.operands[1])
            values[n.id] = apply_binop(op_sym, a, b)
        if check_widths:
            v = values[n.id]
            lo = -(1 << (n.width - 1)) if n.signed else 0
            hi = (1 << (n.width - 1)) - 1 if n.signed else (1 << n.width) - 1
            assert lo <= v <= hi, (
                f"node {n.id} ({n.opcode}) value {v} outside"
                f" {'s' if n.signed else 'u'}{n.width}")

    outputs = {name: op_value(op) for name, op in graph.outputs}
    return outputs, next_state


def run_iterations(graph: DataflowGraph, firings: list[dict[str, int]],
                   check_widths: bool = True) -> list[dict[str, int]]:
    """Feed a sequence of firings through the graph, carrying feedback."""
    state: dict[str, int] = {}
    results = []
    for inputs in firings:
        out, state = evaluate(graph, inputs, state, check_widths)
        results.append(out)
    return results


# --- stable text dump ----------------------------------------------------------------


def dump_graph(graph: DataflowGraph) -> str:
    """One line per node: `id: opcode(width,signed,stage) operands...`."""
    lines = []
    for p in graph.inputs:
        lines.append(f"in {p.name} {'s' if p.signed else 'u'}{p.width}"
                     f" {p.kind}")
    for n in graph.nodes:
        ops = []
        for op in n.operands:
            if isinstance(op, Const):
                ops.append(f"#{op.value}")
            elif isinstance(op, Port):
                ops.append(f"%{op.name}")
            else:
                ops.append(f"n{op.id}")
        sign = "s" if n.signed else "u"
        stage = n.stage if n.stage is not None else "-"
        extra = ""
        if n.opcode in ("LPR", "SNX"):
            extra = f" var={n.var}"
            if n.init is not None:
                extra += f" init={n.init}"
        if n.opcode == "LUT":
            extra = f" table={n.table}"
        lines.append(f"n{n.id}: {n.opcode}({n.width},{sign},{stage})"
                     f" {' '.join(ops)}{extra}".rstrip())
    for name, op in graph.outputs:
        ref = (f"n{op.id}" if isinstance(op, Ref)
               else f"#{op.value}" if isinstance(op, Const) else f"%{op.name}")
        lines.append(f"out {name} {ref}")
    for l, s in graph.feedback_pairs:
        lines.append(f"feedback n{l} n{s}")
    if graph.depth is not None:
        lines.append(f"depth {graph.depth}")
    return "\n".join(lines) + "\n"
