"""Self-contained VHDL-93 emission (numeric_std only) of a linked netlist.

One entity per kernel: data signals are `unsigned`/`signed` vectors,
control strobes are `std_logic`, all registers live in a single clocked
process (synchronous active-high reset), each FSM gets a case-based
transition process, and lookup tables become constant arrays (or generic
ROM component instantiations).  Emission is a pure function of the
netlist, byte-identical across runs.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmitError, VectorShapeError
from .netlist import Comb, Netlist, SigDecl
from .simulator import pack_words

_RESERVED = {
    "abs", "access", "after", "alias", "all", "and", "architecture", "array",
    "assert", "attribute", "begin", "block", "body", "buffer", "bus", "case",
    "component", "configuration", "constant", "disconnect", "downto", "else",
    "elsif", "end", "entity", "exit", "file", "for", "function", "generate",
    "generic", "group", "guarded", "if", "impure", "in", "inertial", "inout",
    "is", "label", "library", "linkage", "literal", "loop", "map", "mod",
    "nand", "new", "next", "nor", "not", "null", "of", "on", "open", "or",
    "others", "out", "package", "port", "postponed", "procedure", "process",
    "pure", "range", "record", "register", "reject", "rem", "report",
    "return", "rol", "ror", "select", "severity", "signal", "shared", "sla",
    "sll", "sra", "srl", "subtype", "then", "to", "transport", "type",
    "unaffected", "units", "until", "use", "variable", "wait", "when",
    "while", "with", "xnor", "xor",
}


@dataclass(frozen=True)
class EmitConfig:
    entity: str
    clock: str = "clk"
    reset: str = "rst"
    lut_style: str = "constant_array"  # or 'rom_component'


def sanitize_identifier(name: str) -> str:
    out = []
    for ch in name:
        out.append(ch if ch.isalnum() or ch == "_" else "_")
    text = "".join(out)
    while "__" in text:
        text = text.replace("__", "_")
    text = text.strip("_") or "sig"
    if text[0].isdigit():
        text = "s_" + text
    if text.lower() in _RESERVED:
        text = text + "_s"
    return text


class _Names:
    """Deterministic, case-insensitively unique VHDL identifiers."""

    def __init__(self):
        self.map: dict[str, str] = {}
        self.taken: set[str] = set()

    def get(self, name: str) -> str:
        if name in self.map:
            return self.map[name]
        base = sanitize_identifier(name)
        if base.lower() in self.taken:
            raise EmitError(f"identifier collision after sanitizing: {base}")
        self.map[name] = base
        self.taken.add(base.lower())
        return base


def _vtype(decl: SigDecl) -> str:
    if decl.control:
        return "std_logic"
    kind = "signed" if decl.signed else "unsigned"
    return f"{kind}({decl.width - 1} downto 0)"


def _const(value: int, width: int, signed: bool) -> str:
    if signed:
        return f"to_signed({value}, {width})"
    return f"to_unsigned({value}, {width})"


class _Emitter:
    def __init__(self, nl: Netlist, cfg: EmitConfig):
        self.nl = nl
        self.cfg = cfg
        self.names = _Names()
        self.decls: dict[str, SigDecl] = {}
        for p in nl.ports:
            self.decls[p.name] = SigDecl(p.name, p.width, p.signed, p.control)
        for c in nl.combs:
            self.decls[c.result.name] = c.result
        for r in nl.regs:
            self.decls[r.q.name] = r.q
        for m in nl.mems:
            self.decls.setdefault(m.data, SigDecl(m.data, m.word_width))
        for l in nl.luts:
            self.decls[l.data.name] = l.data
        for f in nl.fsms:
            for d, _ in f.outputs:
                self.decls[d.name] = d

    # -- operand rendering --

    def ref(self, name: str) -> str:
        return self.names.get(name)

    def as_typed(self, op, width: int, signed: bool) -> str:
        """Render an operand resized to (width, signed), value-preserving."""
        if isinstance(op, int):
            return _const(op, width, signed)
        d = self.decls[op]
        text = self.ref(op)
        if d.control:
            raise EmitError(
                f"control signal {op} used as a number (missing B2U)")
        if d.signed == signed:
            if d.width == width:
                return text
            return f"resize({text}, {width})"
        if signed and not d.signed:
            return f"signed(resize({text}, {width}))"
        # signed source into an unsigned context: wraparound resize
        return f"unsigned(std_logic_vector(resize({text}, {width})))"

    def expr(self, c: Comb) -> str:
        op = c.op
        w = c.result.width
        s = c.result.signed

        def ww(k):
            o = c.operands[k]
            if isinstance(o, int):
                v = o
                return (max(1, v.bit_length()) if v >= 0
                        else (-v - 1).bit_length() + 1), v < 0
            d = self.decls[o]
            return d.width, d.signed

        if op in ("ADD", "SUB"):
            a = self.as_typed(c.operands[0], w, s)
            b = self.as_typed(c.operands[1], w, s)
            return f"{a} {'+' if op == 'ADD' else '-'} {b}"
        if op == "MUL":
            (wa, sa), (wb, sb) = ww(0), ww(1)
            if sa != sb:
                if not sa:
                    wa += 1
                if not sb:
                    wb += 1
                sa = sb = True
            a = self.as_typed(c.operands[0], wa, sa)
            b = self.as_typed(c.operands[1], wb, sb)
            return f"{a} * {b}"
        if op in ("AND", "OR", "XOR"):
            if c.result.control:
                a = self.ctl(c.operands[0])
                b = self.ctl(c.operands[1])
                return f"{a} {op.lower()} {b}"
            a = self.as_typed(c.operands[0], w, s)
            b = self.as_typed(c.operands[1], w, s)
            return f"{a} {op.lower()} {b}"
        if op in ("EQ", "NE", "LT", "LE", "GT", "GE"):
            (wa, sa), (wb, sb) = ww(0), ww(1)
            signed_cmp = sa or sb
            wc = max(wa + (0 if sa or not signed_cmp else 1),
                     wb + (0 if sb or not signed_cmp else 1))
            a = self.as_typed(c.operands[0], wc, signed_cmp)
            b = self.as_typed(c.operands[1], wc, signed_cmp)
            sym = {"EQ": "=", "NE": "/=", "LT": "<", "LE": "<=",
                   "GT": ">", "GE": ">="}[op]
            return f"'1' when {a} {sym} {b} else '0'"
        if op == "SHL":
            a = self.as_typed(c.operands[0], w, s)
            return f"shift_left({a}, {c.operands[1]})"
        if op == "SHR":
            a = self.as_typed(c.operands[0], w, s)
            return f"shift_right({a}, {c.operands[1]})"
        if op == "MUX":
            cond = self.ctl(c.operands[0])
            t = self.as_typed(c.operands[1], w, s)
            f = self.as_typed(c.operands[2], w, s)
            if c.result.control:
                t = self.ctl(c.operands[1])
                f = self.ctl(c.operands[2])
            return f"{t} when {cond} = '1' else {f}"
        if op == "COPY":
            if c.result.control:
                return self.ctl(c.operands[0])
            return self.as_typed(c.operands[0], w, s)
        if op == "NOT":
            return f"not {self.ctl(c.operands[0])}"
        if op == "B2U":
            return f'"1" when {self.ctl(c.operands[0])} = \'1\' else "0"'
        if op == "SLICE":
            src = self.ref(c.operands[0])
            hi = c.lo + w - 1
            body = f"{src}({hi} downto {c.lo})"
            return f"signed({body})" if s else body
        if op == "CONCAT":
            parts = []
            for o in c.operands:
                d = self.decls[o]
                text = self.ref(o)
                parts.append(f"unsigned({text})" if d.signed else text)
            return " & ".join(parts)
        raise EmitError(f"cannot emit op {c.op}")

    def ctl(self, op) -> str:
        """Render an operand as std_logic."""
        if isinstance(op, int):
            return f"'{1 if op else 0}'"
        d = self.decls[op]
        text = self.ref(op)
        if d.control:
            return text
        assert d.width == 1, f"{op} used as control but {d.width} bits wide"
        return f"{text}({0})"

    # -- structure --

    def emit(self) -> str:
        nl, cfg = self.nl, self.cfg
        entity = sanitize_identifier(cfg.entity)
        L: list[str] = []
        L.append(f"-- {entity}: generated pipelined kernel")
        L.append("library ieee;")
        L.append("use ieee.std_logic_1164.all;")
        L.append("use ieee.numeric_std.all;")
        L.append("")
        L.append(f"entity {entity} is")
        L.append("  port (")
        port_lines = []
        for p in nl.ports:
            vt = ("std_logic" if p.control
                  else f"std_logic_vector({p.width - 1} downto 0)")
            port_lines.append(f"    {self.ref(p.name)} : {p.direction} {vt}")
        for m in nl.mems:
            aw = self.decls[m.addr].width
            if m.kind == "in":
                port_lines.append(f"    {self.ref(m.addr)} : out"
                                  f" std_logic_vector({aw - 1} downto 0)")
                port_lines.append(f"    {self.ref(m.data)} : in"
                                  f" std_logic_vector({m.word_width - 1}"
                                  f" downto 0)")
                port_lines.append(f"    {self.ref(m.strobe)} : out std_logic")
            else:
                port_lines.append(f"    {self.ref(m.addr)} : out"
                                  f" std_logic_vector({aw - 1} downto 0)")
                port_lines.append(f"    {self.ref(m.data)} : out"
                                  f" std_logic_vector({m.word_width - 1}"
                                  f" downto 0)")
                port_lines.append(f"    {self.ref(m.strobe)} : out std_logic")
        L.append(";\n".join(port_lines))
        L.append("  );")
        L.append(f"end entity {entity};")
        L.append("")
        L.append(f"architecture rtl of {entity} is")

        # internal renames for ports used as data, memory boundary signals
        mem_sigs = set()
        for m in nl.mems:
            mem_sigs.update((m.addr, m.data, m.strobe))
        data_ports = {p.name for p in nl.ports
                      if p.direction == "in" and not p.control}
        internal: dict[str, str] = {}
        for name in sorted(data_ports):
            internal[name] = f"i_{self.ref(name)}"
        for name in sorted(mem_sigs):
            if not self.decls[name].control:  # strobes drive ports directly
                internal[name] = f"i_{self.ref(name)}"

        port_names = {p.name for p in nl.ports}
        for name, alias in internal.items():
            d = self.decls[name]
            L.append(f"  signal {alias} : {_vtype(d)};")
        for c in nl.combs:
            if c.result.name in mem_sigs or c.result.name in port_names:
                continue
            L.append(f"  signal {self.ref(c.result.name)} :"
                     f" {_vtype(c.result)};")
        for r in nl.regs:
            L.append(f"  signal {self.ref(r.q.name)} : {_vtype(r.q)};")
        for l in nl.luts:
            L.append(f"  signal {self.ref(l.data.name)} : {_vtype(l.data)};")
        for f in nl.fsms:
            tname = f"t_{self.ref(f.name)}"
            lits = ", ".join(f"{self.ref(f.name)}_{s}".upper()
                             for s in f.states)
            L.append(f"  type {tname} is ({lits});")
            L.append(f"  signal {self.ref(f.name)}_state : {tname}"
                     f" := {self.ref(f.name).upper()}_{f.initial};")
            for d, _ in f.outputs:
                if d.name not in port_names:
                    L.append(f"  signal {self.ref(d.name)} : std_logic;")

        if self.cfg.lut_style == "constant_array":
            for l in nl.luts:
                n = 1 << l.spec.address_width
                tname = f"t_lut_{self.ref(l.spec.name)}"
                L.append(f"  type {tname} is array (0 to {n - 1}) of"
                         f" std_logic_vector({l.spec.data_width - 1}"
                         f" downto 0);")
                rows = []
                width_hex = (l.spec.data_width + 3) // 4
                for v in l.spec.contents:
                    rows.append(f'x"{v:0{width_hex}x}"'
                                if l.spec.data_width % 4 == 0
                                else '"' + format(v, f"0{l.spec.data_width}b")
                                + '"')
                body = _wrap_rows(rows)
                L.append(f"  constant c_lut_{self.ref(l.spec.name)} :"
                         f" {tname} := (")
                L.append(body)
                L.append("  );")
        else:
            L.append("  -- vendor ROM macro; body supplied by the target"
                     " library")
            L.append("  component sync_rom is")
            L.append("    generic (addr_width : integer; data_width :"
                     " integer; init_name : string);")
            L.append("    port (clk : in std_logic;")
            L.append("          addr : in std_logic_vector;")
            L.append("          data : out std_logic_vector);")
            L.append("  end component;")
            for l in nl.luts:
                L.append(f"  signal rom_q_{self.ref(l.spec.name)} :"
                         f" std_logic_vector({l.spec.data_width - 1}"
                         f" downto 0);")

        L.append("begin")

        clk = self.ref(self.cfg.clock)
        rst = self.ref(self.cfg.reset)
        # boundary plumbing
        for name in sorted(data_ports):
            d = self.decls[name]
            cast = "signed" if d.signed else "unsigned"
            L.append(f"  {internal[name]} <= {cast}({self.ref(name)});")
        for m in nl.mems:
            aw = self.decls[m.addr].width
            L.append(f"  {self.ref(m.addr)} <="
                     f" std_logic_vector({internal[m.addr]});")
            if m.kind == "in":
                L.append(f"  {internal[m.data]} <="
                         f" unsigned({self.ref(m.data)});")
            else:
                L.append(f"  {self.ref(m.data)} <="
                         f" std_logic_vector({internal[m.data]});")

        # combinational nodes
        for c in nl.combs:
            target = (internal[c.result.name]
                      if c.result.name in internal
                      else self.ref(c.result.name))
            self._subst_internal(c, internal)
            L.append(f"  {target} <= {self.expr(c)};")

        # FSM outputs
        for f in nl.fsms:
            st = f"{self.ref(f.name)}_state"
            pfx = self.ref(f.name).upper()
            for d, states in f.outputs:
                cond = " or ".join(f"({st} = {pfx}_{s})" for s in states)
                L.append(f"  {self.ref(d.name)} <= '1' when {cond}"
                         " else '0';")

        # registers: one clocked process
        L.append("")
        L.append(f"  registers : process ({clk})")
        L.append("  begin")
        L.append(f"    if rising_edge({clk}) then")
        L.append(f"      if {rst} = '1' then")
        for r in nl.regs:
            L.append(f"        {self.ref(r.q.name)} <="
                     f" {self._reset_value(r)};")
        L.append("      else")
        for r in nl.regs:
            d_expr = self._reg_d(r, internal)
            if r.en is not None:
                L.append(f"        if {self.ctl(r.en)} = '1' then"
                         f" {self.ref(r.q.name)} <= {d_expr}; end if;")
            else:
                L.append(f"        {self.ref(r.q.name)} <= {d_expr};")
        if self.cfg.lut_style == "constant_array":
            for l in nl.luts:
                cast = "signed" if l.data.signed else "unsigned"
                L.append(f"        {self.ref(l.data.name)} <="
                         f" {cast}(c_lut_{self.ref(l.spec.name)}"
                         f"(to_integer({self._addr_expr(l, internal)})));")
        L.append("      end if;")
        L.append("    end if;")
        L.append("  end process registers;")

        if self.cfg.lut_style == "rom_component":
            for l in nl.luts:
                name = self.ref(l.spec.name)
                L.append(f"  u_rom_{name} : sync_rom")
                L.append(f"    generic map (addr_width =>"
                         f" {l.spec.address_width}, data_width =>"
                         f" {l.spec.data_width}, init_name => \"{name}\")")
                L.append(f"    port map (clk => {clk}, addr =>"
                         f" std_logic_vector({self._addr_expr(l, internal)}),"
                         f" data => rom_q_{name});")
                cast = "signed" if l.data.signed else "unsigned"
                L.append(f"  {self.ref(l.data.name)} <="
                         f" {cast}(rom_q_{name});")

        # FSM transition processes
        for f in nl.fsms:
            st = f"{self.ref(f.name)}_state"
            pfx = self.ref(f.name).upper()
            L.append("")
            L.append(f"  {self.ref(f.name)}_fsm : process ({clk})")
            L.append("  begin")
            L.append(f"    if rising_edge({clk}) then")
            L.append(f"      if {rst} = '1' then")
            L.append(f"        {st} <= {pfx}_{f.initial};")
            L.append("      else")
            L.append(f"        case {st} is")
            by_state: dict[str, list] = {}
            for s, g, n in f.transitions:
                by_state.setdefault(s, []).append((g, n))
            for s in f.states:
                L.append(f"          when {pfx}_{s} =>")
                arcs = by_state.get(s, [])
                if not arcs:
                    L.append("            null;")
                    continue
                first = True
                for g, n in arcs:
                    if g is None:
                        if first:
                            L.append(f"            {st} <= {pfx}_{n};")
                        else:
                            L.append("            else")
                            L.append(f"              {st} <= {pfx}_{n};")
                            L.append("            end if;")
                        break
                    kw = "if" if first else "elsif"
                    L.append(f"            {kw} {self.ctl(g)} = '1' then")
                    L.append(f"              {st} <= {pfx}_{n};")
                    first = False
                else:
                    if not first:
                        L.append("            end if;")
                L.append("")
            L.append("          when others => null;")
            L.append("        end case;")
            L.append("      end if;")
            L.append("    end if;")
            L.append(f"  end process {self.ref(f.name)}_fsm;")

        L.append(f"end architecture rtl;")
        return "\n".join(L) + "\n"

    def _subst_internal(self, c: Comb, internal):
        ops = []
        for op in c.operands:
            if isinstance(op, str) and op in internal:
                d = self.decls[op]
                self.decls[internal[op]] = SigDecl(internal[op], d.width,
                                                   d.signed, d.control)
                self.names.map.setdefault(internal[op], internal[op])
                self.names.taken.add(internal[op].lower())
                ops.append(internal[op])
            else:
                ops.append(op)
        c.operands = tuple(ops)

    def _addr_expr(self, l, internal) -> str:
        name = internal.get(l.addr, None)
        if name is None:
            return self.ref(l.addr)
        return name

    def _reset_value(self, r) -> str:
        if r.q.control:
            return f"'{r.reset & 1}'"
        return _const(r.reset, r.q.width, r.q.signed)

    def _reg_d(self, r, internal) -> str:
        name = internal.get(r.d, None)
        src = name if name is not None else self.ref(r.d)
        d_decl = self.decls.get(r.d)
        if r.q.control:
            return self.ctl(r.d)
        if d_decl is not None and d_decl.signed != r.q.signed:
            cast = "signed" if r.q.signed else "unsigned"
            return f"{cast}({src})"
        return src


def _wrap_rows(rows: list[str], per_line: int = 8) -> str:
    lines = []
    for i in range(0, len(rows), per_line):
        chunk = ", ".join(rows[i:i + per_line])
        tail = "," if i + per_line < len(rows) else ""
        lines.append(f"    {chunk}{tail}")
    return "\n".join(lines)


def emit(nl: Netlist, cfg: EmitConfig) -> str:
    """Emit the netlist as one synthesizable VHDL-93 design file."""
    import copy
    return _Emitter(copy.deepcopy(nl), cfg).emit()


def emit_testbench(nl: Netlist, cfg: EmitConfig, vectors: dict,
                   expected: dict[str, list], max_cycles: int) -> str:
    """Self-checking testbench: preloads input BRAMs, pulses start, waits
    for done, asserts every reference-defined output cell."""
    entity = sanitize_identifier(cfg.entity)
    L: list[str] = []
    L.append(f"-- testbench for {entity}")
    L.append("library ieee;")
    L.append("use ieee.std_logic_1164.all;")
    L.append("use ieee.numeric_std.all;")
    L.append("")
    L.append(f"entity {entity}_tb is")
    L.append(f"end entity {entity}_tb;")
    L.append("")
    L.append(f"architecture sim of {entity}_tb is")
    L.append("  signal clk : std_logic := '0';")
    L.append("  signal rst : std_logic := '1';")
    L.append("  signal start : std_logic := '0';")
    L.append("  signal done : std_logic;")
    L.append("  signal stop : boolean := false;")

    scalar_ports = [p for p in nl.ports
                    if p.direction == "in"
                    and p.name not in ("clk", "rst", "start")]
    scalars = vectors.get("scalars", {})
    for p in scalar_ports:
        if p.name not in scalars:
            raise VectorShapeError(f"missing scalar input '{p.name}'")
        L.append(f"  signal {p.name} : std_logic_vector({p.width - 1}"
                 " downto 0) :="
                 f" std_logic_vector(to_signed({scalars[p.name]},"
                 f" {p.width}))"
                 if p.signed else
                 f"  signal {p.name} : std_logic_vector({p.width - 1}"
                 " downto 0) :="
                 f" std_logic_vector(to_unsigned({scalars[p.name]},"
                 f" {p.width}))")

    memories = vectors.get("memories", {})
    for m in nl.mems:
        aw = max(1, (m.depth - 1).bit_length())
        L.append(f"  signal {m.addr} : std_logic_vector({_addr_w(nl, m) - 1}"
                 " downto 0);")
        L.append(f"  signal {m.data} : std_logic_vector({m.word_width - 1}"
                 " downto 0);")
        L.append(f"  signal {m.strobe} : std_logic;")
        L.append(f"  type t_{m.name} is array (0 to {m.depth - 1}) of"
                 f" std_logic_vector({m.word_width - 1} downto 0);")
        if m.kind == "in":
            if m.array not in memories:
                raise VectorShapeError(f"missing input array '{m.array}'")
            elems = memories[m.array]
            words = pack_words([v & ((1 << m.elem_width) - 1) for v in elems],
                               m.elem_width, m.elems_per_word, m.depth)
            hexw = (m.word_width + 3) // 4
            if m.word_width % 4 == 0:
                rows = [f'x"{w:0{hexw}x}"' for w in words]
            else:
                rows = ['"' + format(w, f"0{m.word_width}b") + '"'
                        for w in words]
            L.append(f"  signal mem_{m.name} : t_{m.name} := (")
            L.append(_wrap_rows(rows))
            L.append("  );")
        else:
            L.append(f"  signal mem_{m.name} : t_{m.name} :="
                     f" (others => (others => '0'));")

    L.append(f"  component {entity} is")
    L.append("    port (")
    ports = []
    for p in nl.ports:
        vt = ("std_logic" if p.control
              else f"std_logic_vector({p.width - 1} downto 0)")
        ports.append(f"      {p.name} : {p.direction} {vt}")
    for m in nl.mems:
        aw = _addr_w(nl, m)
        dirn = "in" if m.kind == "in" else "out"
        ports.append(f"      {m.addr} : out std_logic_vector({aw - 1}"
                     " downto 0)")
        ports.append(f"      {m.data} : {dirn}"
                     f" std_logic_vector({m.word_width - 1} downto 0)")
        ports.append(f"      {m.strobe} : out std_logic")
    L.append(";\n".join(ports))
    L.append("    );")
    L.append("  end component;")
    L.append("begin")
    L.append("  clk <= not clk after 5 ns when not stop else '0';")
    L.append("")
    mappings = [f"{p.name} => {p.name}" for p in nl.ports]
    for m in nl.mems:
        mappings += [f"{m.addr} => {m.addr}", f"{m.data} => {m.data}",
                     f"{m.strobe} => {m.strobe}"]
    L.append(f"  dut : {entity} port map ({', '.join(mappings)});")
    L.append("")
    for m in nl.mems:
        if m.kind == "in":
            L.append(f"  {m.name}_read : process (clk)")
            L.append("  begin")
            L.append("    if rising_edge(clk) then")
            L.append(f"      if {m.strobe} = '1' then")
            L.append(f"        {m.data} <= mem_{m.name}"
                     f"(to_integer(unsigned({m.addr})));")
            L.append("      end if;")
            L.append("    end if;")
            L.append(f"  end process {m.name}_read;")
        else:
            L.append(f"  {m.name}_write : process (clk)")
            L.append("  begin")
            L.append("    if rising_edge(clk) then")
            L.append(f"      if {m.strobe} = '1' then")
            L.append(f"        mem_{m.name}(to_integer(unsigned({m.addr})))"
                     f" <= {m.data};")
            L.append("      end if;")
            L.append("    end if;")
            L.append(f"  end process {m.name}_write;")

    L.append("")
    L.append("  stimulus : process")
    L.append("  begin")
    L.append("    wait for 20 ns;")
    L.append("    rst <= '0';")
    L.append("    wait until rising_edge(clk);")
    L.append("    start <= '1';")
    L.append("    wait until rising_edge(clk);")
    L.append("    start <= '0';")
    L.append(f"    for k in 0 to {max_cycles} loop")
    L.append("      wait until rising_edge(clk);")
    L.append("      exit when done = '1';")
    L.append("    end loop;")
    L.append("    assert done = '1' report \"timeout waiting for done\""
             " severity failure;")
    checks = 0
    for m in nl.mems:
        if m.kind != "out" or m.array not in expected:
            continue
        for addr, value in enumerate(expected[m.array]):
            if value is None:
                continue
            checks += 1
            L.append(f"    assert mem_{m.name}({addr}) ="
                     f" std_logic_vector(to_unsigned({value},"
                     f" {m.word_width}))")
            L.append(f"      report \"{m.array}[{addr}] mismatch\""
                     " severity failure;")
    L.append(f"    report \"TB PASS ({checks} checks)\" severity note;")
    L.append("    stop <= true;")
    L.append("    wait;")
    L.append("  end process stimulus;")
    L.append("end architecture sim;")
    return "\n".join(L) + "\n"


def _addr_w(nl: Netlist, m) -> int:
    for c in nl.combs:
        if c.result.name == m.addr:
            return c.result.width
    return max(1, (m.depth - 1).bit_length())
