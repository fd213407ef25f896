"""Cycle-accurate two-phase simulation of linked netlists.

Each cycle: (1) combinational settle in topological order (FSM Moore
outputs first, they depend only on state), (2) synchronous update of
registers, memories, LUT read ports, and FSM states.  Input memories have
a one-cycle read latency; the run ends when `done` asserts or at the
cycle cap.  Values are raw bit patterns; operators reinterpret them per
the declared signedness, exactly like the emitted VHDL.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import SimTimeout, VectorShapeError, XValue
from .netlist import Netlist, comb_topo_order


@dataclass
class MemoryImage:
    name: str
    word_width: int
    contents: list[int]


@dataclass
class SimConfig:
    memories: dict[str, list[int]] = field(default_factory=dict)
    scalars: dict[str, int] = field(default_factory=dict)
    max_cycles: int = 100000
    record_trace: bool = True


@dataclass
class CycleRecord:
    cycle: int
    reads: list[tuple[str, int]] = field(default_factory=list)
    writes: list[tuple[str, int, int]] = field(default_factory=list)
    exports: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    results: list[tuple[str, int]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "cycle": self.cycle, "reads": self.reads, "writes": self.writes,
            "exports": [[a, list(v)] for a, v in self.exports],
            "results": self.results,
        }, sort_keys=True)


@dataclass
class SimTrace:
    cycles: list[CycleRecord] = field(default_factory=list)
    total_cycles: int = 0
    done_cycle: int | None = None

    def to_jsonl(self) -> str:
        return "\n".join(c.to_json() for c in self.cycles) + "\n"


def _typed(v: int, width: int, signed: bool) -> int:
    if signed and v >= (1 << (width - 1)):
        return v - (1 << width)
    return v


def pack_words(elements: list[int], elem_width: int, epw: int,
               depth: int) -> list[int]:
    """Element list -> bus words, element k in lane k % epw of word k // epw."""
    mask = (1 << elem_width) - 1
    words = [0] * depth
    for k, v in enumerate(elements):
        words[k // epw] |= (v & mask) << ((k % epw) * elem_width)
    return words


def simulate(nl: Netlist, cfg: SimConfig) -> tuple[SimTrace, dict[str, list]]:
    """Run the netlist; returns the trace and the final output images
    (None marks never-written cells)."""
    index: dict[str, int] = {}

    def idx(name: str) -> int:
        if name not in index:
            index[name] = len(index)
        return index[name]

    decls = {}
    for p in nl.ports:
        decls[p.name] = (p.width, p.signed)
        idx(p.name)
    for c in nl.combs:
        decls[c.result.name] = (c.result.width, c.result.signed)
        idx(c.result.name)
    for r in nl.regs:
        decls[r.q.name] = (r.q.width, r.q.signed)
        idx(r.q.name)
    for m in nl.mems:
        decls[m.data] = (m.word_width, False)
        idx(m.data)
    for l in nl.luts:
        decls[l.data.name] = (l.data.width, l.data.signed)
        idx(l.data.name)
    for f in nl.fsms:
        for d, _ in f.outputs:
            decls[d.name] = (d.width, d.signed)
            idx(d.name)
    for c in nl.combs:  # referenced-only names (should not happen post-check)
        for op in c.operands:
            if isinstance(op, str):
                idx(op)

    values = [0] * len(index)

    # scalar input ports
    in_ports = {p.name for p in nl.ports if p.direction == "in"}
    for name, v in cfg.scalars.items():
        if name not in in_ports:
            raise VectorShapeError(f"unknown scalar input '{name}'")
        w, s = decls[name]
        values[index[name]] = v & ((1 << w) - 1)

    # memories
    in_mems = []
    out_mems = []
    for m in nl.mems:
        if m.kind == "in":
            if m.array not in cfg.memories:
                raise VectorShapeError(f"missing input array '{m.array}'")
            elems = cfg.memories[m.array]
            expected = m.depth * m.elems_per_word
            # images are sized by the declared extent, not the bus rounding
            decl_elems = nl.meta.get("extents", {}).get(m.array)
            need = decl_elems if decl_elems is not None else m.total_elems
            if len(elems) != need:
                raise VectorShapeError(
                    f"array '{m.array}' expects {need} elements,"
                    f" got {len(elems)}")
            lo = nl.meta.get("elem_min", {}).get(m.array)
            hi = nl.meta.get("elem_max", {}).get(m.array)
            if lo is not None:
                for v in elems:
                    if not (lo <= v <= hi):
                        raise VectorShapeError(
                            f"value {v} does not fit '{m.array}' elements")
            words = pack_words(elems, m.elem_width, m.elems_per_word, m.depth)
            in_mems.append((m, words, index[m.addr], index[m.strobe],
                            index[m.data]))
        else:
            out_mems.append((m, {}, index[m.addr], index[m.strobe],
                             index[m.data]))

    # compile combinational plan
    plan = []
    mask_of = {name: (1 << w) - 1 for name, (w, s) in decls.items()}
    for c in comb_topo_order(nl):
        plan.append(_compile_comb(c, index, decls))

    regs = []
    for r in nl.regs:
        regs.append((index[r.q.name], index[r.d],
                     index[r.en] if r.en else None, r.reset))
        values[index[r.q.name]] = r.reset

    luts = [(index[l.addr], index[l.data.name], l.spec.contents)
            for l in nl.luts]

    fsm_states = []
    fsm_outputs = []  # (sig_idx, {state_idx: value})
    fsm_trans = []
    for f in nl.fsms:
        st_index = {s: i for i, s in enumerate(f.states)}
        fsm_states.append(st_index[f.initial])
        outs = []
        for d, states in f.outputs:
            active = {st_index[s] for s in states}
            outs.append((index[d.name], active))
        fsm_outputs.append(outs)
        trans = {}
        for s, guard, nxt in f.transitions:
            trans.setdefault(st_index[s], []).append(
                (index[guard] if guard else None, st_index[nxt]))
        fsm_trans.append(trans)

    # trace metadata
    window_meta = nl.meta.get("windows", [])  # [(array, valid_sig, [taps])]
    windows = [(arr, index[valid], [index[t] for t in taps],
                decls[taps[0]][0] if taps else 0)
               for arr, valid, taps in window_meta]
    result_meta = nl.meta.get("result_signals", [])
    results = [(name, index[name]) for name in result_meta]
    rv_idx = index.get("result_valid")
    done_idx = index.get("done")
    start_idx = index.get("start")

    trace = SimTrace()
    done_seen = None
    for cycle in range(cfg.max_cycles):
        if start_idx is not None:
            values[start_idx] = 1 if cycle == 0 else 0
        # phase 1: settle
        for outs, state in zip(fsm_outputs, fsm_states):
            for sig_idx, active in outs:
                values[sig_idx] = 1 if state in active else 0
        for fn in plan:
            fn(values)
        rec = CycleRecord(cycle) if cfg.record_trace else None
        if rec is not None:
            for m, words, a_i, e_i, d_i in in_mems:
                if values[e_i]:
                    rec.reads.append((m.name, values[a_i]))
            for m, cells, a_i, w_i, d_i in out_mems:
                if values[w_i]:
                    rec.writes.append((m.name, values[a_i], values[d_i]))
            for arr, v_i, taps, tw in windows:
                if values[v_i]:
                    rec.exports.append((arr, tuple(values[t] for t in taps)))
            if rv_idx is not None and values[rv_idx]:
                for name, i in results:
                    rec.results.append((name, values[i]))
            if rec.reads or rec.writes or rec.exports or rec.results:
                trace.cycles.append(rec)
        # phase 2: sample everything, then commit (simultaneous update)
        reg_next = [(q, values[d]) for q, d, en, _rst in regs
                    if en is None or values[en]]
        mem_next = []
        for m, words, a_i, e_i, d_i in in_mems:
            if values[e_i]:
                addr = values[a_i]
                if not (0 <= addr < len(words)):
                    raise SimTimeout(
                        f"memory '{m.name}' address {addr} out of range")
                mem_next.append((d_i, words[addr]))
        write_next = []
        for m, cells, a_i, w_i, d_i in out_mems:
            if values[w_i]:
                write_next.append((cells, values[a_i], values[d_i]))
        lut_next = [(d_i, contents[values[a_i]])
                    for a_i, d_i, contents in luts]
        fsm_next = list(fsm_states)
        for k in range(len(nl.fsms)):
            for guard_idx, nxt in fsm_trans[k].get(fsm_states[k], ()):
                if guard_idx is None or values[guard_idx]:
                    fsm_next[k] = nxt
                    break
        done_now = done_idx is not None and values[done_idx]
        for q, v in reg_next:
            values[q] = v
        for d_i, v in mem_next:
            values[d_i] = v
        for cells, addr, v in write_next:
            cells[addr] = v
        for d_i, v in lut_next:
            values[d_i] = v
        fsm_states = fsm_next
        if done_now:
            done_seen = cycle
            trace.total_cycles = cycle + 1
            break
    else:
        raise SimTimeout(
            f"`done` not asserted within {cfg.max_cycles} cycles")
    trace.done_cycle = done_seen

    outputs: dict[str, list] = {}
    for m, cells, _a, _w, _d in out_mems:
        img = [None] * m.depth
        for addr, v in cells.items():
            if not (0 <= addr < m.depth):
                raise SimTimeout(
                    f"memory '{m.name}' write address {addr} out of range")
            img[addr] = v
        outputs[m.array] = img
    return trace, outputs


def _compile_comb(c, index, decls):
    """Specialize one combinational op into a closure over the value table."""
    ridx = index[c.result.name]
    rw, rs = decls[c.result.name]
    rmask = (1 << rw) - 1

    def src(op):
        if isinstance(op, int):
            return None, op, 64, op < 0
        i = index[op]
        w, s = decls[op]
        return i, None, w, s

    ops = [src(op) for op in c.operands]

    def load(k):
        i, const, w, s = ops[k]
        if i is None:
            return lambda v: const
        half = 1 << (w - 1)
        full = 1 << w
        if s:
            return lambda v: v[i] - full if v[i] >= half else v[i]
        return lambda v: v[i]

    if c.op in ("ADD", "SUB", "MUL", "AND", "OR", "XOR"):
        a, b = load(0), load(1)
        import operator as _op
        fn = {"ADD": _op.add, "SUB": _op.sub, "MUL": _op.mul,
              "AND": _op.and_, "OR": _op.or_, "XOR": _op.xor}[c.op]
        return lambda v: v.__setitem__(ridx, fn(a(v), b(v)) & rmask)
    if c.op in ("EQ", "NE", "LT", "LE", "GT", "GE"):
        a, b = load(0), load(1)
        import operator as _op
        fn = {"EQ": _op.eq, "NE": _op.ne, "LT": _op.lt, "LE": _op.le,
              "GT": _op.gt, "GE": _op.ge}[c.op]
        return lambda v: v.__setitem__(ridx, 1 if fn(a(v), b(v)) else 0)
    if c.op == "SHL":
        a = load(0)
        k = c.operands[1]
        return lambda v: v.__setitem__(ridx, (a(v) << k) & rmask)
    if c.op == "SHR":
        a = load(0)
        k = c.operands[1]
        return lambda v: v.__setitem__(ridx, (a(v) >> k) & rmask)
    if c.op == "MUX":
        cidx = index[c.operands[0]] if isinstance(c.operands[0], str) else None
        cconst = c.operands[0] if cidx is None else None
        t_i = index[c.operands[1]] if isinstance(c.operands[1], str) else None
        f_i = index[c.operands[2]] if isinstance(c.operands[2], str) else None
        t_c = c.operands[1] if t_i is None else None
        f_c = c.operands[2] if f_i is None else None

        def mux(v):
            cond = v[cidx] if cidx is not None else cconst
            if cond:
                v[ridx] = v[t_i] if t_i is not None else (t_c & rmask)
            else:
                v[ridx] = v[f_i] if f_i is not None else (f_c & rmask)
        return mux
    if c.op == "COPY":
        a = load(0)
        return lambda v: v.__setitem__(ridx, a(v) & rmask)
    if c.op == "B2U":
        a = load(0)
        return lambda v: v.__setitem__(ridx, 1 if a(v) else 0)
    if c.op == "NOT":
        a = load(0)
        return lambda v: v.__setitem__(ridx, 0 if a(v) else 1)
    if c.op == "SLICE":
        i = index[c.operands[0]]
        lo = c.lo
        return lambda v: v.__setitem__(ridx, (v[i] >> lo) & rmask)
    if c.op == "CONCAT":
        parts = []
        for op in c.operands:
            i = index[op]
            w, _ = decls[op]
            parts.append((i, w))

        def concat(v):
            acc = 0
            for i, w in parts:
                acc = (acc << w) | v[i]
            v[ridx] = acc
        return concat
    raise ValueError(f"cannot simulate op {c.op}")


# --- metrics ---------------------------------------------------------------------


def measure(trace: SimTrace, nl: Netlist) -> dict:
    """Throughput and reuse numbers from a completed simulation."""
    mems = {m.name: m for m in nl.mems}
    reads_by_mem: dict[str, list[int]] = {}
    writes = []
    exports = 0
    for rec in trace.cycles:
        for name, addr in rec.reads:
            reads_by_mem.setdefault(name, []).append(addr)
        for name, addr, data in rec.writes:
            writes.append((rec.cycle, name, addr, data))
        exports += len(rec.exports)

    element_reads = {}
    bus_words = {}
    for name, addrs in reads_by_mem.items():
        m = mems[name]
        bus_words[m.array] = len(addrs)
        total = 0
        for a in addrs:
            first = a * m.elems_per_word
            last = first + m.elems_per_word - 1
            lo = max(first, m.base_elem)
            hi = min(last, m.total_elems - 1)
            total += max(0, hi - lo + 1)
        element_reads[m.array] = total

    write_cycles = [c for c, *_ in writes]
    first = min(write_cycles) if write_cycles else None
    last = max(write_cycles) if write_cycles else None
    steady = None
    if len(write_cycles) >= 2 and last > first:
        steady = (len(write_cycles) - 1) / (last - first)
    elif write_cycles:
        steady = 1.0
    trip = nl.meta.get("trip", 1)
    return {
        "element_reads": element_reads,
        "bus_words_read": bus_words,
        "cycles_to_first_result": first,
        "steady_results_per_cycle": steady,
        "results_per_firing": (len(writes) / trip) if trip else None,
        "window_exports": exports,
        "total_stores": len(writes),
        "total_cycles": trace.total_cycles,
    }


def compare_images(actual: dict[str, list], expected: dict[str, list],
                   ) -> list[str]:
    """Differences between simulated and reference outputs; a read of a
    never-written cell that the reference defines raises XValue."""
    diffs = []
    for name in sorted(expected):
        if name not in actual:
            diffs.append(f"missing output '{name}'")
            continue
        exp, act = expected[name], actual[name]
        if len(exp) != len(act):
            diffs.append(f"'{name}' length {len(act)} != {len(exp)}")
            continue
        for k, (e, a) in enumerate(zip(exp, act)):
            if e is not None and a is None:
                raise XValue(
                    f"output '{name}'[{k}] was never written but the"
                    f" reference defines {e}")
            if e != a:
                diffs.append(f"'{name}'[{k}] = {a}, reference {e}")
    return diffs
