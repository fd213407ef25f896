"""Flat synchronous RTL model: signals, combinational nodes, registers,
FSMs, memory ports, and LUT ROMs.

Semantics (shared by the simulator and the VHDL emitter):
  * signals carry raw bit patterns of a declared width; `signed` controls
    how operators interpret them, `control` marks single-bit strobes
    (std_logic in VHDL, vectors otherwise)
  * every operator is value-exact at its declared result width except
    COPY (explicit resize/wraparound) and SLICE (explicit bit field) —
    there is no implicit truncation anywhere
  * registers update on the clock edge, optionally gated by an enable,
    with synchronous active-high reset to a declared value
  * input memories have a one-cycle read latency; output memories commit
    writes on the edge
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import LinkError
from .luts import LutSpec

_BIN = {"ADD", "SUB", "MUL", "AND", "OR", "XOR"}
_CMP = {"EQ", "NE", "LT", "LE", "GT", "GE"}
_SHIFT = {"SHL", "SHR"}


@dataclass(frozen=True)
class SigDecl:
    name: str
    width: int
    signed: bool = False
    control: bool = False


@dataclass
class Comb:
    op: str
    result: SigDecl
    operands: tuple  # signal names (str) or integer constants
    # SLICE uses `lo`; CONCAT concatenates operands MSB-first
    lo: int = 0


@dataclass
class Register:
    q: SigDecl
    d: str
    reset: int = 0
    en: str | None = None
    kind: str = "control"  # census category


@dataclass
class Memory:
    name: str
    kind: str            # 'in' | 'out'
    word_width: int
    depth: int
    addr: str
    data: str            # rdata for 'in', wdata for 'out'
    strobe: str          # en for 'in', we for 'out'
    array: str = ""
    elem_width: int = 0
    elems_per_word: int = 1
    total_elems: int = 0
    base_elem: int = 0


@dataclass
class Fsm:
    name: str
    states: tuple[str, ...]
    initial: str
    # evaluated in order; guard None matches unconditionally
    transitions: tuple[tuple[str, str | None, str], ...]
    # Moore outputs: signal driven to 1 in the listed states, else 0
    outputs: tuple[tuple[SigDecl, tuple[str, ...]], ...]


@dataclass
class LutRom:
    spec: LutSpec
    addr: str
    data: SigDecl  # registered read port


@dataclass
class Port:
    name: str
    direction: str  # 'in' | 'out'
    width: int
    signed: bool = False
    control: bool = False


@dataclass
class Fragment:
    """A piece of the design with explicit boundary expectations."""

    name: str
    combs: list[Comb] = field(default_factory=list)
    regs: list[Register] = field(default_factory=list)
    mems: list[Memory] = field(default_factory=list)
    fsms: list[Fsm] = field(default_factory=list)
    luts: list[LutRom] = field(default_factory=list)
    ports: list[Port] = field(default_factory=list)
    requires: dict[str, int] = field(default_factory=dict)  # name -> width
    meta: dict = field(default_factory=dict)

    # -- construction helpers --

    def sig(self, name: str, width: int, signed=False, control=False) -> SigDecl:
        return SigDecl(name, width, signed, control)

    def comb(self, op: str, result: SigDecl, operands, lo: int = 0) -> str:
        self.combs.append(Comb(op, result, tuple(operands), lo))
        return result.name

    def reg(self, q: SigDecl, d: str, reset=0, en=None, kind="control") -> str:
        self.regs.append(Register(q, d, reset, en, kind))
        return q.name

    def require(self, name: str, width: int) -> str:
        self.requires[name] = width
        return name


@dataclass
class Netlist:
    name: str
    ports: list[Port] = field(default_factory=list)
    combs: list[Comb] = field(default_factory=list)
    regs: list[Register] = field(default_factory=list)
    mems: list[Memory] = field(default_factory=list)
    fsms: list[Fsm] = field(default_factory=list)
    luts: list[LutRom] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    # -- derived views --

    def drivers(self) -> dict[str, SigDecl]:
        """Every driven signal with its declaration."""
        out: dict[str, SigDecl] = {}

        def add(decl: SigDecl, what: str):
            if decl.name in out:
                raise LinkError(f"multiple drivers: {decl.name}")
            out[decl.name] = decl

        for p in self.ports:
            if p.direction == "in":
                add(SigDecl(p.name, p.width, p.signed, p.control), "port")
        for c in self.combs:
            add(c.result, "comb")
        for r in self.regs:
            add(r.q, "reg")
        for m in self.mems:
            if m.kind == "in":
                add(SigDecl(m.data, m.word_width), "mem")
        for l in self.luts:
            add(l.data, "lut")
        for f in self.fsms:
            for decl, _states in f.outputs:
                add(decl, "fsm")
        return out

    def register_census(self) -> dict[str, int]:
        census: dict[str, int] = {}
        for r in self.regs:
            census[r.kind] = census.get(r.kind, 0) + 1
        return census


def expected_width(c: Comb, widths: dict[str, SigDecl]) -> int | None:
    """Result width the op semantics demand; None = unconstrained."""
    def ws(op) -> tuple[int, bool]:
        if isinstance(op, int):
            if op >= 0:
                return max(1, op.bit_length()), False
            return ((-op - 1).bit_length() + 1 if op != -1 else 1), True
        d = widths[op]
        return d.width, d.signed

    if c.op in _CMP:
        return 1
    if c.op == "NOT":
        return ws(c.operands[0])[0]
    if c.op == "MUX":
        return ws(c.operands[1])[0]
    if c.op in _BIN:
        (a, sa), (b, sb) = ws(c.operands[0]), ws(c.operands[1])
        if sa != sb:  # unsigned side is reinterpreted signed one bit wider
            if not sa:
                a += 1
            if not sb:
                b += 1
        if c.op == "MUL":
            return a + b
        if c.op in ("ADD", "SUB"):
            return max(a, b) + 1
        return max(a, b)
    if c.op == "SHL":
        return ws(c.operands[0])[0] + c.operands[1]
    if c.op == "SHR":
        return ws(c.operands[0])[0]
    if c.op == "CONCAT":
        return sum(ws(o)[0] for o in c.operands)
    if c.op == "B2U":
        return 1
    if c.op in ("COPY", "SLICE"):
        return None
    raise LinkError(f"unknown netlist op {c.op}")


def link(fragments: list[Fragment], name: str, ports: list[Port],
         meta: dict | None = None) -> Netlist:
    """Merge fragments into one flat netlist, verifying that every
    required boundary signal exists with the expected width."""
    nl = Netlist(name, list(ports), meta=dict(meta or {}))
    for f in fragments:
        nl.combs.extend(f.combs)
        nl.regs.extend(f.regs)
        nl.mems.extend(f.mems)
        nl.fsms.extend(f.fsms)
        nl.luts.extend(f.luts)
        for p in f.ports:
            if all(q.name != p.name for q in nl.ports):
                nl.ports.append(p)
    try:
        driven = nl.drivers()
    except LinkError:
        raise
    for f in fragments:
        for sig, width in f.requires.items():
            if sig not in driven:
                raise LinkError(f"undriven signal: {sig}"
                                f" (required by fragment '{f.name}')")
            if driven[sig].width != width:
                raise LinkError(
                    f"width conflict on {sig}: fragment '{f.name}' expects"
                    f" {width}, driver provides {driven[sig].width}")
    problems = check(nl)
    if problems:
        raise LinkError("; ".join(problems[:5]))
    return nl


def check(nl: Netlist) -> list[str]:
    """Structural invariants; an empty list means the netlist is sound."""
    problems: list[str] = []
    try:
        driven = nl.drivers()
    except LinkError as exc:
        # rebuild tolerantly so all duplicates are reported
        seen: dict[str, SigDecl] = {}
        problems.append(str(exc.message if hasattr(exc, "message") else exc))
        driven = {}
        for decl in _all_driver_decls(nl):
            if decl.name in driven:
                continue
            driven[decl.name] = decl

    def used_signals():
        for c in nl.combs:
            for op in c.operands:
                if isinstance(op, str):
                    yield op, f"operand of {c.result.name}"
        for r in nl.regs:
            yield r.d, f"input of register {r.q.name}"
            if r.en is not None:
                yield r.en, f"enable of register {r.q.name}"
        for m in nl.mems:
            yield m.addr, f"address of memory {m.name}"
            yield m.strobe, f"strobe of memory {m.name}"
            if m.kind == "out":
                yield m.data, f"write data of memory {m.name}"
        for l in nl.luts:
            yield l.addr, f"address of lut {l.spec.name}"
        for f in nl.fsms:
            for _s, guard, _n in f.transitions:
                if guard is not None:
                    yield guard, f"guard of fsm {f.name}"

    out_ports = {p.name for p in nl.ports if p.direction == "out"}
    for sig, where in used_signals():
        if sig not in driven:
            problems.append(f"undriven signal: {sig} ({where})")
    for p in nl.ports:
        if p.direction == "out" and p.name not in driven:
            problems.append(f"undriven output port: {p.name}")

    # width discipline
    for c in nl.combs:
        missing = [op for op in c.operands
                   if isinstance(op, str) and op not in driven]
        if missing:
            continue
        exp = expected_width(c, driven)
        if exp is not None and exp != c.result.width:
            problems.append(
                f"width mismatch: {c.op} into {c.result.width}-bit"
                f" {c.result.name} (expects {exp})")
        if c.op == "MUX":
            a, b = c.operands[1], c.operands[2]
            wa = driven[a].width if isinstance(a, str) else None
            wb = driven[b].width if isinstance(b, str) else None
            if wa is not None and wb is not None and wa != wb:
                problems.append(
                    f"width mismatch: MUX arms {wa} vs {wb}"
                    f" for {c.result.name}")
        if c.op == "SLICE":
            src = c.operands[0]
            if isinstance(src, str) and src in driven:
                if c.lo + c.result.width > driven[src].width:
                    problems.append(
                        f"slice [{c.lo}+:{c.result.width}] exceeds"
                        f" {src} width {driven[src].width}")
    for r in nl.regs:
        if r.d in driven and driven[r.d].width != r.q.width:
            problems.append(
                f"width mismatch: {driven[r.d].width}-bit {r.d} into"
                f" {r.q.width}-bit register {r.q.name}")
        if r.en is not None and r.en in driven and driven[r.en].width != 1:
            problems.append(f"register enable {r.en} is not 1 bit")
    for m in nl.mems:
        if m.kind == "out" and m.data in driven \
                and driven[m.data].width != m.word_width:
            problems.append(
                f"width mismatch: {driven[m.data].width}-bit {m.data} into"
                f" {m.word_width}-bit memory {m.name}")

    problems.extend(_comb_cycles(nl, driven))
    return problems


def _all_driver_decls(nl: Netlist):
    for p in nl.ports:
        if p.direction == "in":
            yield SigDecl(p.name, p.width, p.signed, p.control)
    for c in nl.combs:
        yield c.result
    for r in nl.regs:
        yield r.q
    for m in nl.mems:
        if m.kind == "in":
            yield SigDecl(m.data, m.word_width)
    for l in nl.luts:
        yield l.data
    for f in nl.fsms:
        for decl, _ in f.outputs:
            yield decl


def _comb_cycles(nl: Netlist, driven) -> list[str]:
    """Detect combinational cycles (registers/memories/FSMs break paths)."""
    comb_of: dict[str, Comb] = {c.result.name: c for c in nl.combs}
    state = {}  # 0 visiting, 1 done
    problems = []

    order: list[str] = []

    def visit(name: str, stack: list[str]):
        if name not in comb_of or state.get(name) == 1:
            return
        if state.get(name) == 0:
            cycle = stack[stack.index(name):] + [name]
            problems.append("combinational cycle {" + ", ".join(
                sorted(set(cycle))) + "}")
            return
        state[name] = 0
        stack.append(name)
        for op in comb_of[name].operands:
            if isinstance(op, str):
                visit(op, stack)
        stack.pop()
        state[name] = 1
        order.append(name)

    for name in comb_of:
        if state.get(name) != 1:
            visit(name, [])
    return problems


def comb_topo_order(nl: Netlist) -> list[Comb]:
    """Combinational nodes in dependency order (check() must be clean)."""
    comb_of: dict[str, Comb] = {c.result.name: c for c in nl.combs}
    order: list[Comb] = []
    state: dict[str, int] = {}

    def visit(name: str):
        if name not in comb_of or state.get(name) == 1:
            return
        assert state.get(name) != 0, f"comb cycle at {name}"
        state[name] = 0
        for op in comb_of[name].operands:
            if isinstance(op, str):
                visit(op)
        state[name] = 1
        order.append(comb_of[name])

    for c in nl.combs:
        visit(c.result.name)
    return order


# --- stable text dump and its parser ------------------------------------------


def _flags(width: int, signed: bool, control: bool) -> str:
    return f"{width}{'s' if signed else 'u'}{'c' if control else ''}"


def _parse_flags(text: str) -> tuple[int, bool, bool]:
    control = text.endswith("c")
    if control:
        text = text[:-1]
    signed = text.endswith("s")
    width = int(text[:-1])
    return width, signed, control


def _op_str(op) -> str:
    return f"#{op}" if isinstance(op, int) else op


def _parse_op(text: str):
    return int(text[1:]) if text.startswith("#") else text


def dump_netlist(nl: Netlist) -> str:
    lines = [f"NETLIST {nl.name}"]
    lines.append("PORTS")
    for p in nl.ports:
        lines.append(f"  {p.name} {p.direction}"
                     f" {_flags(p.width, p.signed, p.control)}")
    lines.append("REGS")
    for r in nl.regs:
        en = r.en or "-"
        lines.append(f"  {r.q.name} {_flags(r.q.width, r.q.signed, r.q.control)}"
                     f" d={r.d} rst={r.reset} en={en} kind={r.kind}")
    lines.append("NODES")
    for c in nl.combs:
        ops = " ".join(_op_str(o) for o in c.operands)
        lo = f" lo={c.lo}" if c.op == "SLICE" else ""
        lines.append(f"  {c.result.name}"
                     f" {_flags(c.result.width, c.result.signed, c.result.control)}"
                     f" {c.op} {ops}{lo}")
    lines.append("FSMS")
    for f in nl.fsms:
        trans = ";".join(f"{s}:{g or '*'}>{n}" for s, g, n in f.transitions)
        outs = ";".join(
            f"{decl.name}={_flags(decl.width, decl.signed, decl.control)}"
            f":{','.join(states)}"
            for decl, states in f.outputs)
        lines.append(f"  {f.name} states={','.join(f.states)} init={f.initial}"
                     f" trans={trans} outs={outs}")
    lines.append("MEMS")
    for m in nl.mems:
        lines.append(
            f"  {m.name} {m.kind} w={m.word_width} depth={m.depth}"
            f" addr={m.addr} data={m.data} strobe={m.strobe}"
            f" array={m.array} ew={m.elem_width} epw={m.elems_per_word}"
            f" elems={m.total_elems} base={m.base_elem}")
    lines.append("LUTS")
    for l in nl.luts:
        body = ",".join(format(v, "x") for v in l.spec.contents)
        lines.append(
            f"  {l.spec.name} addr={l.addr}"
            f" data={l.data.name}:{_flags(l.data.width, l.data.signed, False)}"
            f" aw={l.spec.address_width} dw={l.spec.data_width}"
            f" signed={int(l.spec.signed)} src={l.spec.source}"
            f" contents={body}")
    lines.append("META")
    for key in sorted(nl.meta):
        lines.append(f"  {key}={nl.meta[key]!r}")
    return "\n".join(lines) + "\n"


def parse_netlist(text: str) -> Netlist:
    """Inverse of dump_netlist (used by `sim` on netlist dumps)."""
    import ast as pyast

    lines = text.splitlines()
    if not lines or not lines[0].startswith("NETLIST "):
        raise LinkError("not a netlist dump")
    nl = Netlist(lines[0].split(None, 1)[1])
    section = None
    for raw in lines[1:]:
        if not raw.strip():
            continue
        if not raw.startswith("  "):
            section = raw.strip()
            continue
        item = raw.strip()
        if section == "PORTS":
            name, direction, flags = item.split()
            w, s, c = _parse_flags(flags)
            nl.ports.append(Port(name, direction, w, s, c))
        elif section == "REGS":
            name, flags, d, rst, en, kind = item.split()
            w, s, c = _parse_flags(flags)
            nl.regs.append(Register(
                SigDecl(name, w, s, c), d.split("=", 1)[1],
                int(rst.split("=", 1)[1]),
                None if en.split("=", 1)[1] == "-" else en.split("=", 1)[1],
                kind.split("=", 1)[1]))
        elif section == "NODES":
            parts = item.split()
            name, flags, op = parts[0], parts[1], parts[2]
            rest = parts[3:]
            lo = 0
            if rest and rest[-1].startswith("lo="):
                lo = int(rest[-1][3:])
                rest = rest[:-1]
            w, s, c = _parse_flags(flags)
            nl.combs.append(Comb(op, SigDecl(name, w, s, c),
                                 tuple(_parse_op(o) for o in rest), lo))
        elif section == "FSMS":
            fields = dict(part.split("=", 1) for part in item.split()[1:])
            name = item.split()[0]
            states = tuple(fields["states"].split(","))
            transitions = []
            if fields.get("trans"):
                for t in fields["trans"].split(";"):
                    s_g, n = t.split(">")
                    s, g = s_g.split(":")
                    transitions.append((s, None if g == "*" else g, n))
            outputs = []
            if fields.get("outs"):
                for o in fields["outs"].split(";"):
                    sig_flags, states_text = o.split(":", 1)
                    sname, sflags = sig_flags.split("=")
                    w, s, c = _parse_flags(sflags)
                    outputs.append((SigDecl(sname, w, s, c),
                                    tuple(states_text.split(","))))
            nl.fsms.append(Fsm(name, states, fields["init"],
                               tuple(transitions), tuple(outputs)))
        elif section == "MEMS":
            parts = item.split()
            name, kind = parts[0], parts[1]
            fields = dict(p.split("=", 1) for p in parts[2:])
            nl.mems.append(Memory(
                name, kind, int(fields["w"]), int(fields["depth"]),
                fields["addr"], fields["data"], fields["strobe"],
                fields["array"], int(fields["ew"]), int(fields["epw"]),
                int(fields["elems"]), int(fields["base"])))
        elif section == "LUTS":
            parts = item.split()
            name = parts[0]
            fields = dict(p.split("=", 1) for p in parts[1:])
            dname, dflags = fields["data"].split(":")
            w, s, c = _parse_flags(dflags)
            contents = tuple(int(v, 16) for v in fields["contents"].split(","))
            spec = LutSpec(name, int(fields["aw"]), int(fields["dw"]),
                           bool(int(fields["signed"])), fields["src"], contents)
            nl.luts.append(LutRom(spec, fields["addr"], SigDecl(dname, w, s, c)))
        elif section == "META":
            key, value = item.split("=", 1)
            nl.meta[key] = pyast.literal_eval(value)
        else:
            raise LinkError(f"unknown dump section {section!r}")
    return nl
