"""Pipeline driver: runs the fixed pass order, links the hardware
fragments, and produces the emitted files, dumps, and the report.

Pass order (logged, byte-stable for a given input):
  parse -> check_restrictions -> inline_calls -> fold_constants ->
  trip overrides -> unroll (explicit, then automatic inner loops) ->
  scalar_replace -> detect_window -> predicate -> lower -> bind_lut ->
  infer_widths -> schedule -> buffer/controller/drain generation ->
  link -> check -> emit
"""

from __future__ import annotations

import dataclasses
import hashlib
import random
from dataclasses import dataclass, field

from . import dataflow, datapath, emitter, memgen, transforms
from .ast_nodes import For, IntLit, KernelAst, print_kernel
from .errors import CompileError, InitFileError, RestrictionError
from .frontend import check_restrictions, inline_calls, parse
from .luts import BUILTIN_TABLES, LutSpec, parse_init_file
from .netlist import Netlist, Port, dump_netlist, link
from .oracle import interpret_oracle
from .simulator import SimConfig, SimTrace, compare_images, measure, simulate
from .transforms import (
    LoopSpec, ScalarizedKernel, detect_window, fold_constants, loop_trip,
    predicate, scalar_replace, unroll_full,
)

DEFAULT_SEED = 20240613


@dataclass
class LutBinding:
    """A user table: init file text plus port geometry."""

    text: str
    address_width: int = 10
    data_width: int = 16
    signed: bool = False
    source: str = "<inline>"


@dataclass
class CompileOptions:
    bus_width: int = 32
    unroll: dict[str, object] = field(default_factory=dict)  # var -> 'full'|k
    trip_overrides: dict[str, int] = field(default_factory=dict)
    unroll_limit: int = 16
    lut_bindings: dict[str, LutBinding] = field(default_factory=dict)
    emit_style: str = "constant_array"
    entity: str | None = None
    max_feedback_depth: int = 8
    dump_ir: bool = False
    dump_netlist: bool = False
    dump_passes: bool = False


@dataclass
class CompileResult:
    name: str
    ast: KernelAst
    scalarized: ScalarizedKernel
    windows: dict[str, transforms.WindowSpec]
    graph: dataflow.DataflowGraph
    netlist: Netlist
    vhdl: str
    pass_log: str
    report: dict
    ir_dump: str | None = None
    netlist_dump: str | None = None
    pass_dump: str | None = None


def _override_trip(ast: KernelAst, overrides: dict[str, int]) -> KernelAst:
    missing = set(overrides)

    def rewrite(stmts):
        out = []
        for s in stmts:
            if isinstance(s, For):
                body = rewrite(s.body)
                if s.var in overrides:
                    missing.discard(s.var)
                    lower, _count, step = loop_trip(s)
                    count = overrides[s.var]
                    if count < 1:
                        raise RestrictionError(
                            f"trip override for '{s.var}' must be >= 1")
                    s = For(s.var, IntLit(lower), "<",
                            IntLit(lower + count * step), IntLit(step), body)
                else:
                    s = dataclasses.replace(s, body=body)
            out.append(s)
        return tuple(out)

    result = dataclasses.replace(ast, body=rewrite(ast.body))
    if missing:
        raise RestrictionError(
            f"trip override names unknown loop(s): {', '.join(sorted(missing))}")
    return result


def _auto_unroll(ast: KernelAst, limit: int, log: list[str]) -> KernelAst:
    """Fully unroll inner loops (loops nested inside another loop) whose
    trip count is within the limit; the outermost loop streams."""
    def find_inner(stmts, depth):
        for s in stmts:
            if isinstance(s, For):
                got = find_inner(s.body, depth + 1)
                if got is not None:
                    return got
                if depth >= 1:
                    _lo, count, _st = loop_trip(s)
                    if count <= limit:
                        return s.var
        return None

    while True:
        var = find_inner(ast.body, 0)
        if var is None:
            return ast
        ast = fold_constants(unroll_full(ast, var, "full"))
        log.append(f"pass unroll: loop '{var}' fully unrolled (automatic)")


def _resolve_luts(sk: ScalarizedKernel, bindings: dict[str, LutBinding],
                  log: list[str]) -> dict[str, LutSpec]:
    from .ast_nodes import LutExpr
    from .frontend import stmt_exprs, walk_exprs, walk_stmts
    tables = sorted({sub.table for s in walk_stmts(sk.compute)
                     for e in stmt_exprs(s) for sub in walk_exprs(e)
                     if isinstance(sub, LutExpr)})
    specs: dict[str, LutSpec] = {}
    for table in tables:
        if table in bindings:
            b = bindings[table]
            spec = parse_init_file(table, b.text, b.address_width,
                                   b.data_width, b.signed, b.source)
        elif table in BUILTIN_TABLES:
            spec = BUILTIN_TABLES[table]()
        else:
            raise InitFileError(f"unbound lookup table '{table}'")
        log.append(f"pass bind_lut: '{table}' from {spec.source}"
                   f" ({1 << spec.address_width}x{spec.data_width})")
        specs[table] = spec
    return specs


def compile_source(source: str, options: CompileOptions | None = None,
                   filename: str = "<input>") -> CompileResult:
    opts = options or CompileOptions()
    log: list[str] = []
    passes: list[str] = []

    def snapshot(stage: str, ast):
        if opts.dump_passes:
            passes.append(f"== {stage} ==\n{print_kernel(ast)}")

    ast = parse(source, filename)
    log.append(f"pass parse: kernel '{ast.name}', {len(ast.body)} top-level"
               f" statements, {len(ast.helpers)} helpers")
    ast = check_restrictions(ast)
    log.append("pass check_restrictions: ok, arrays "
               + ", ".join(f"{a.name}:{a.direction}" for a in ast.arrays))
    ast = inline_calls(ast)
    log.append("pass inline_calls: body is call-free")
    ast = fold_constants(ast)
    log.append("pass fold_constants: ok")
    snapshot("after folding", ast)

    if opts.trip_overrides:
        ast = fold_constants(_override_trip(ast, opts.trip_overrides))
        log.append("pass trip_override: "
                   + ", ".join(f"{k}={v}"
                               for k, v in sorted(opts.trip_overrides.items())))
    for var in sorted(opts.unroll):
        factor = opts.unroll[var]
        ast = fold_constants(unroll_full(ast, var, factor))
        log.append(f"pass unroll: loop '{var}' factor {factor}")
    ast = _auto_unroll(ast, opts.unroll_limit, log)
    snapshot("after unrolling", ast)

    sk = scalar_replace(ast)
    log.append(f"pass scalar_replace: {len(sk.loads)} loads,"
               f" {len(sk.stores)} stores, {len(sk.feedbacks)} feedback"
               f" variable(s), loop {_loop_str(sk.loop)}")

    arrays = {a.name: a for a in ast.arrays}
    windows: dict[str, transforms.WindowSpec] = {}
    for arr in sorted({ld.array for ld in sk.loads}):
        ws = detect_window(sk, arr, opts.bus_width)
        windows[arr] = ws
        log.append(f"pass detect_window: '{arr}' window {ws.shape} stride"
                   f" {ws.stride} data {ws.data_width}b bus {ws.bus_width}b")

    sk = predicate(sk)
    log.append("pass predicate: compute fragment is branch-free")

    lut_specs = _resolve_luts(sk, opts.lut_bindings, log)
    graph = dataflow.lower(sk, lut_specs)
    log.append(f"pass lower: {len(graph.nodes)} nodes,"
               f" {len(graph.inputs)} inputs, {len(graph.outputs)} outputs")
    graph = dataflow.infer_widths(graph)
    log.append("pass infer_widths: ok")
    graph = dataflow.schedule(graph, opts.max_feedback_depth)
    log.append(f"pass schedule: pipeline depth {graph.depth}")

    nl = _build_netlist(ast, sk, windows, graph, log)
    vhdl = emitter.emit(nl, emitter.EmitConfig(
        entity=opts.entity or ast.name, lut_style=opts.emit_style))
    log.append(f"pass emit: entity '{opts.entity or ast.name}',"
               f" {len(vhdl.splitlines())} lines")

    report = _build_report(ast, sk, windows, graph, nl)
    result = CompileResult(
        ast.name, ast, sk, windows, graph, nl, vhdl,
        "\n".join(log) + "\n", report)
    if opts.dump_ir:
        result.ir_dump = dataflow.dump_graph(graph)
    if opts.dump_netlist:
        result.netlist_dump = dump_netlist(nl)
    if opts.dump_passes:
        result.pass_dump = "\n".join(passes)
    return result


def _loop_str(loop: LoopSpec) -> str:
    if not loop.indices:
        return "(none)"
    return "x".join(f"{ix.var}:{ix.count}" for ix in loop.indices)


def _build_netlist(ast, sk, windows, graph, log) -> Netlist:
    arrays = {a.name: a for a in ast.arrays}
    in_arrays = sorted(windows)
    out_arrays = []
    for st in sk.stores:
        if st.array not in out_arrays:
            out_arrays.append(st.array)
    multi_in = len(in_arrays) > 1
    multi_out = len(out_arrays) > 1
    trip = sk.loop.trip

    # smart buffers (input side)
    geos: dict[str, memgen.BufferGeometry] = {}
    tap_signal: dict[str, str] = {}
    window_meta = []
    fragments = []
    for arr in in_arrays:
        ws = windows[arr]
        decl = arrays[arr]
        img_w = decl.extents[1] if len(decl.extents) == 2 else 1
        arr_loads = [ld for ld in sk.loads if ld.array == arr]
        offs = [memgen.tap_offset(ld.dims, ws, img_w) for ld in arr_loads]
        geo = memgen.buffer_geometry(ws, sk.loop, decl, offs)
        geos[arr] = geo
        for k, ld in enumerate(arr_loads):
            tap_signal[ld.scalar] = f"sb_{arr}_tap{k}"
        frag = memgen.build_smart_buffer(geo, multi_in, "fire")
        fragments.append(frag)
        suffix = f"_{arr}" if multi_in else ""
        window_meta.append((arr, f"window_valid{suffix}",
                            [f"sb_{arr}_tap{k}"
                             for k in range(len(arr_loads))]))
        log.append(f"pass buffer_gen: '{arr}' ring {geo.cap} elements,"
                   f" words {geo.word_first}..{geo.word_last}")

    # datapath
    scalar_ports = {name: (ctype.width, ctype.signed)
                    for name, ctype in sk.scalar_ins}
    store_widths = [st.ctype.width for st in sk.stores]
    dp = datapath.build_datapath(graph, tap_signal, scalar_ports,
                                 store_widths)
    fragments.append(dp)
    result_signals = dp.meta["result_signals"]

    # output drains; pointer outputs behave as 1-element output arrays
    from .ast_nodes import ArrayDecl
    spacing = 1
    plans = []
    out_param_decls = {
        p.name: ArrayDecl(p.name, p.ctype, (1,), "out", False)
        for p in ast.params if p.direction == "out"}
    for arr in out_arrays:
        decl = arrays.get(arr) or out_param_decls[arr]
        sigs = [result_signals[k] for k, st in enumerate(sk.stores)
                if st.array == arr]
        stores = [st for st in sk.stores if st.array == arr]
        plan = memgen.store_plan(stores, decl, sk.loop, sigs)
        plans.append(plan)
        spacing = max(spacing, len(plan.offsets))
        fragments.append(memgen.build_output_drain(plan, multi_out, trip))
    log.append(f"pass drain_gen: {len(out_arrays)} output port(s),"
               f" firing spacing {spacing}")

    ctrl = memgen.build_controller(sk.loop, trip, in_arrays, out_arrays,
                                   spacing)
    fragments.append(ctrl)
    log.append("pass controller_gen: fsms "
               + ", ".join(f.name for f in ctrl.fsms))

    ports = [
        Port("clk", "in", 1, control=True),
        Port("rst", "in", 1, control=True),
        Port("start", "in", 1, control=True),
        Port("done", "out", 1, control=True),
    ]
    for p in ast.params:
        if p.direction == "in":
            ports.append(Port(p.name, "in", p.ctype.width, p.ctype.signed))

    meta = {
        "kernel": ast.name,
        "trip": trip,
        "depth": graph.depth,
        "windows": window_meta,
        "result_signals": result_signals,
        "extents": {a.name: _flat(a.extents) for a in ast.arrays
                    if a.direction == "in"},
        "elem_min": {a.name: a.element.min for a in ast.arrays
                     if a.direction == "in"},
        "elem_max": {a.name: a.element.max for a in ast.arrays
                     if a.direction == "in"},
        "spacing": spacing,
        "census_expect": {
            "dp_latch": dp.meta["latched"] - sum(
                1 for n in graph.nodes if n.opcode == "LUT"),
            "copy_delays": dp.meta["copy_delays"],
            "buffer_slots": sum(g.cap for g in geos.values()),
            "feedback": len(graph.feedback_pairs),
        },
    }
    nl = link(fragments, ast.name, ports, meta)
    log.append(f"pass link: {len(nl.combs)} nodes, {len(nl.regs)} registers,"
               f" {len(nl.fsms)} fsms; check clean")
    return nl


def _flat(extents) -> int:
    total = 1
    for e in extents:
        total *= e
    return total


def _build_report(ast, sk, windows, graph, nl) -> dict:
    census = nl.register_census()
    out_widths = {}
    for name, op in graph.outputs:
        if isinstance(op, dataflow.Ref):
            node = graph.nodes[op.id]
            # report the value width before any output resize
            src = node
            while src.opcode == "COPY" and src.operands \
                    and isinstance(src.operands[0], dataflow.Ref) \
                    and src.target is None:
                src = graph.nodes[src.operands[0].id]
            out_widths[name] = src.width
        else:
            out_widths[name] = None

    spacing = nl.meta.get("spacing", 1)
    intervals = [spacing]
    for arr, ws in windows.items():
        adv = ws.stride[-1] if ws.stride else 0
        if adv > 0:
            intervals.append(-(-adv // ws.elems_per_word))
    interval = max(intervals + [1])
    stores_per_firing = len(sk.stores)

    signals = []
    for n in graph.nodes:
        signals.append({
            "id": n.id, "opcode": n.opcode, "width": n.width,
            "signed": bool(n.signed), "stage": n.stage,
        })
    return {
        "kernel": ast.name,
        "pipeline_depth": graph.depth,
        "registers_total": len(nl.regs),
        "registers_by_kind": census,
        "datapath_registers": census.get("dp_latch", 0)
        + census.get("copy_delays", 0) + census.get("copy_delay", 0)
        + census.get("feedback", 0),
        "windows": {arr: {"shape": list(ws.shape), "stride": list(ws.stride),
                          "data_width": ws.data_width,
                          "bus_width": ws.bus_width}
                    for arr, ws in windows.items()},
        "inferred_output_widths": out_widths,
        "stores_per_firing": stores_per_firing,
        "firing_interval_cycles": interval,
        "predicted_results_per_cycle": stores_per_firing / interval,
        "trip": nl.meta["trip"],
        "fsms": [f.name for f in nl.fsms],
        "signals": signals,
    }


# --- simulation entry points -------------------------------------------------


def lut_tables_for_oracle(graph) -> dict:
    from .ast_nodes import ScalarType
    tables = {}
    for n in graph.nodes:
        if n.opcode == "LUT" and n.lut is not None:
            tables[n.table] = (list(n.lut.contents),
                               ScalarType(n.lut.signed, n.lut.data_width))
    return tables


def default_max_cycles(nl: Netlist) -> int:
    trip = nl.meta.get("trip", 1)
    depth = nl.meta.get("depth", 1) or 1
    words = sum(m.depth for m in nl.mems if m.kind == "in")
    stores = sum(m.depth for m in nl.mems if m.kind == "out")
    return 10 * (trip + depth + words + stores) + 64


def run_simulation(result: CompileResult, vectors: dict,
                   check_oracle: bool = False, max_cycles: int | None = None,
                   record_trace: bool = True):
    """Simulate a compiled kernel over one vector set.

    Returns (trace, outputs, metrics, oracle_outputs, diffs); oracle
    fields are None unless `check_oracle` is set.
    """
    cfg = SimConfig(
        memories=dict(vectors.get("memories", {})),
        scalars=dict(vectors.get("scalars", {})),
        max_cycles=max_cycles or default_max_cycles(result.netlist),
        record_trace=record_trace)
    trace, outputs = simulate(result.netlist, cfg)
    metrics = measure(trace, result.netlist)
    oracle_out = diffs = None
    if check_oracle:
        oracle_out = interpret_oracle(
            result.ast, cfg.memories, cfg.scalars,
            lut_tables_for_oracle(result.graph))
        diffs = compare_images(outputs, oracle_out)
    return trace, outputs, metrics, oracle_out, diffs


def random_vectors(ast: KernelAst, seed: int, index: int) -> dict:
    """Deterministic random input set for one kernel (stable across runs
    and platforms)."""
    token = f"{seed}:{ast.name}:{index}".encode()
    rng = random.Random(int.from_bytes(
        hashlib.sha256(token).digest()[:8], "big"))
    memories = {}
    for a in ast.arrays:
        if a.direction != "in":
            continue
        total = _flat(a.extents)
        memories[a.name] = [rng.randint(a.element.min, a.element.max)
                            for _ in range(total)]
    scalars = {}
    for p in ast.params:
        if p.direction == "in":
            scalars[p.name] = rng.randint(p.ctype.min, p.ctype.max)
    return {"memories": memories, "scalars": scalars}
