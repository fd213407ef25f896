"""Command-line driver: `compile`, `sim`, `report`, and `serve`.

The CLI is a thin client of the compile service: it builds the same
request models and calls the handlers in-process, or sends them to a
running server when `--server URL` is given.  Outputs are written via a
temp file and renamed, so failed runs never leave partial files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from .errors import CompileError
from .service import (
    CompileRequest, LutBindingModel, OptionsModel, ReportRequest, SimRequest,
    VectorsModel, handle_compile, handle_report, handle_sim,
)

SEED_ENV = "MINIHLS_SEED"
DEFAULT_SEED = 20240613


def _seed() -> int:
    return int(os.environ.get(SEED_ENV, DEFAULT_SEED))


def _write_file(path: Path, content: str):
    """Write-to-temp, rename-on-success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_lut_arg(text: str) -> tuple[str, LutBindingModel]:
    """`name=path[:addr_width,data_width[,signed]]`"""
    name, _, rest = text.partition("=")
    if not rest:
        raise CompileError(f"bad --lut argument {text!r}"
                           " (expected name=path[:aw,dw[,signed]])")
    path, _, geom = rest.partition(":")
    aw, dw, signed = 10, 16, False
    if geom:
        parts = geom.split(",")
        aw = int(parts[0])
        if len(parts) > 1:
            dw = int(parts[1])
        if len(parts) > 2:
            signed = parts[2] == "signed"
    contents = Path(path).read_text()
    return name, LutBindingModel(text=contents, address_width=aw,
                                 data_width=dw, signed=signed)


def _options_from_args(args) -> OptionsModel:
    unroll = {}
    for item in args.unroll or []:
        name, _, factor = item.partition("=")
        if not factor:
            raise CompileError(f"bad --unroll argument {item!r}")
        unroll[name] = factor if factor == "full" else int(factor)
    trips = {}
    for item in args.trip or []:
        name, _, count = item.partition("=")
        if not count:
            raise CompileError(f"bad --trip argument {item!r}")
        trips[name] = int(count)
    luts = {}
    for item in args.lut or []:
        name, binding = _parse_lut_arg(item)
        luts[name] = binding
    return OptionsModel(
        bus_width=args.bus, unroll=unroll, trip_overrides=trips,
        unroll_limit=args.unroll_limit, lut_bindings=luts,
        emit_style=args.emit_style, entity=args.entity,
        dump_ir=getattr(args, "dump_ir", False),
        dump_netlist=getattr(args, "dump_netlist", False),
        dump_passes=getattr(args, "dump_passes", False))


def _load_vectors(path: str | None, source_text: str | None,
                  options: OptionsModel, index: int = 0) -> VectorsModel:
    if path:
        data = json.loads(Path(path).read_text())
        return VectorsModel(**data)
    # no vectors given: deterministic random set from the seed
    if source_text is None:
        raise CompileError("no vectors available")
    from .driver import random_vectors
    from .frontend import check_restrictions, parse
    ast = check_restrictions(parse(source_text))
    return VectorsModel(**random_vectors(ast, _seed(), index))


def _post(server: str, endpoint: str, payload: dict) -> dict:
    import httpx
    resp = httpx.post(f"{server.rstrip('/')}{endpoint}", json=payload,
                      timeout=300.0)
    if resp.status_code == 400:
        detail = resp.json().get("detail", {})
        raise CompileError(detail.get("message", "compile error"))
    resp.raise_for_status()
    return resp.json()


def cmd_compile(args) -> int:
    source = Path(args.input).read_text()
    options = _options_from_args(args)
    vectors = _load_vectors(args.vectors, source, options)
    req = CompileRequest(source=source, filename=args.input, options=options,
                         testbench_vectors=vectors.model_dump())
    if args.server:
        data = _post(args.server, "/compile", req.model_dump())
    else:
        data = handle_compile(req).model_dump()

    out_path = Path(args.output or Path(args.input).with_suffix(".vhd").name)
    _write_file(out_path, data["vhdl"])
    written = [str(out_path)]
    if data.get("testbench"):
        tb_path = out_path.with_name(out_path.stem + "_tb.vhd")
        _write_file(tb_path, data["testbench"])
        written.append(str(tb_path))
    for key, suffix in (("ir_dump", ".ir"), ("netlist_dump", ".netlist"),
                        ("pass_dump", ".passes")):
        if data.get(key):
            p = out_path.with_suffix(suffix)
            _write_file(p, data[key])
            written.append(str(p))
    sys.stdout.write(data["pass_log"])
    sys.stdout.write("wrote: " + " ".join(written) + "\n")
    return 0


def cmd_sim(args) -> int:
    text = Path(args.input).read_text()
    if text.startswith("NETLIST "):
        return _sim_netlist_dump(args, text)
    options = _options_from_args(args)
    vectors = _load_vectors(args.vectors, text, options)
    req = SimRequest(source=text, filename=args.input, options=options,
                     vectors=vectors, check_oracle=args.check_oracle,
                     max_cycles=args.max_cycles, trace=args.trace)
    if args.server:
        data = _post(args.server, "/simulate", req.model_dump())
    else:
        data = handle_sim(req).model_dump()

    for name in sorted(data["outputs"]):
        sys.stdout.write(f"{name} = {data['outputs'][name]}\n")
    metrics = data["metrics"]
    for key in sorted(metrics):
        sys.stdout.write(f"{key}: {metrics[key]}\n")
    if args.trace and data.get("trace_jsonl"):
        trace_path = Path(args.input).with_suffix(".trace.jsonl").name
        _write_file(Path(trace_path), data["trace_jsonl"])
        sys.stdout.write(f"trace: {trace_path}\n")
    if args.check_oracle:
        if data["oracle_match"]:
            sys.stdout.write("oracle: PASS\n")
        else:
            sys.stdout.write("oracle: FAIL\n")
            for d in data["differences"] or []:
                sys.stderr.write(f"mismatch: {d}\n")
            return 1
    return 0


def _sim_netlist_dump(args, text: str) -> int:
    """Simulate a netlist dump directly (no oracle available)."""
    from .netlist import parse_netlist
    from .simulator import SimConfig, measure, simulate
    if args.check_oracle:
        raise CompileError(
            "--check-oracle needs kernel source, not a netlist dump")
    if not args.vectors:
        raise CompileError("simulating a netlist dump requires --vectors")
    nl = parse_netlist(text)
    data = json.loads(Path(args.vectors).read_text())
    from .driver import default_max_cycles
    cfg = SimConfig(memories=data.get("memories", {}),
                    scalars=data.get("scalars", {}),
                    max_cycles=args.max_cycles or default_max_cycles(nl))
    trace, outputs = simulate(nl, cfg)
    for name in sorted(outputs):
        sys.stdout.write(f"{name} = {outputs[name]}\n")
    metrics = measure(trace, nl)
    for key in sorted(metrics):
        sys.stdout.write(f"{key}: {metrics[key]}\n")
    if args.trace:
        trace_path = Path(args.input).with_suffix(".trace.jsonl").name
        _write_file(Path(trace_path), trace.to_jsonl())
        sys.stdout.write(f"trace: {trace_path}\n")
    return 0


def cmd_report(args) -> int:
    source = Path(args.input).read_text()
    options = _options_from_args(args)
    req = ReportRequest(source=source, filename=args.input, options=options)
    if args.server:
        data = _post(args.server, "/report", req.model_dump())
    else:
        data = handle_report(req).model_dump()
    rep = data["report"]
    w = sys.stdout.write
    w(f"kernel: {rep['kernel']}\n")
    w(f"pipeline depth: {rep['pipeline_depth']}\n")
    w(f"datapath registers: {rep['datapath_registers']}\n")
    w(f"registers total: {rep['registers_total']}\n")
    for kind in sorted(rep["registers_by_kind"]):
        w(f"  {kind}: {rep['registers_by_kind'][kind]}\n")
    for arr in sorted(rep["windows"]):
        ws = rep["windows"][arr]
        w(f"window {arr}: shape {tuple(ws['shape'])} stride"
          f" {tuple(ws['stride'])} data {ws['data_width']}b bus"
          f" {ws['bus_width']}b\n")
    w(f"trip count: {rep['trip']}\n")
    w(f"stores per firing: {rep['stores_per_firing']}\n")
    w(f"predicted throughput: {rep['predicted_results_per_cycle']:.3f}"
      " results/cycle\n")
    w("inferred output widths: "
      + ", ".join(f"{k}={v}" for k, v in
                  sorted(rep["inferred_output_widths"].items())) + "\n")
    w("fsms: " + ", ".join(rep["fsms"]) + "\n")
    w("signal widths:\n")
    for sig in rep["signals"]:
        w(f"  n{sig['id']}: {sig['opcode']} width={sig['width']}"
          f" signed={int(sig['signed'])} stage={sig['stage']}\n")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    uvicorn.run("minihls.service:app", host=args.host, port=args.port)
    return 0


def _add_common(p: argparse.ArgumentParser, dumps: bool):
    p.add_argument("input", help="kernel source file (.c)")
    p.add_argument("--bus", "-b", type=int, default=32,
                   choices=(8, 16, 32, 64), help="memory bus width in bits")
    p.add_argument("--unroll", action="append", metavar="LOOP=FACTOR|full",
                   help="unroll a loop (repeatable)")
    p.add_argument("--trip", action="append", metavar="LOOP=COUNT",
                   help="override a loop's trip count (repeatable)")
    p.add_argument("--unroll-limit", type=int, default=16,
                   help="auto-unroll inner loops up to this trip count")
    p.add_argument("--lut", action="append",
                   metavar="NAME=PATH[:AW,DW[,signed]]",
                   help="bind a lookup table init file (repeatable)")
    p.add_argument("--emit-style", default="constant_array",
                   choices=("constant_array", "rom_component"))
    p.add_argument("--entity", help="override the VHDL entity name")
    p.add_argument("--server", help="send the request to a running service")
    if dumps:
        p.add_argument("--dump-ir", action="store_true")
        p.add_argument("--dump-netlist", action="store_true")
        p.add_argument("--dump-passes", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minihls",
        description="Compile restricted C loop kernels to pipelined VHDL,"
                    " simulate them cycle-accurately, and report widths"
                    " and throughput.")
    sub = parser.add_subparsers(dest="command", required=True)

    pc = sub.add_parser("compile", help="emit <kernel>.vhd and a testbench")
    _add_common(pc, dumps=True)
    pc.add_argument("-o", "--output", help="output VHDL path")
    pc.add_argument("--vectors", help="JSON vectors for the testbench"
                                      " (default: seeded random)")
    pc.set_defaults(fn=cmd_compile)

    ps = sub.add_parser("sim", help="simulate a kernel or a netlist dump")
    _add_common(ps, dumps=False)
    ps.add_argument("--vectors", help="JSON input vectors")
    ps.add_argument("--check-oracle", action="store_true",
                    help="compare against the reference interpreter")
    ps.add_argument("--trace", action="store_true",
                    help="write a JSON-lines cycle trace")
    ps.add_argument("--max-cycles", type=int)
    ps.set_defaults(fn=cmd_sim)

    pr = sub.add_parser("report", help="widths, depth, window, throughput")
    _add_common(pr, dumps=False)
    pr.set_defaults(fn=cmd_report)

    pv = sub.add_parser("serve", help="run the compile service")
    pv.add_argument("--host", default="127.0.0.1")
    pv.add_argument("--port", type=int, default=8000)
    pv.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CompileError as exc:
        filename = getattr(args, "input", "<input>")
        sys.stderr.write(exc.format(filename) + "\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception as exc:  # internal invariant failure
        sys.stderr.write(f"internal error: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
