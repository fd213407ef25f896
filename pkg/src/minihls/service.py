"""HTTP compile service: the core pipeline behind three POST endpoints.

The CLI builds the same request models and calls the handlers in-process;
a deployed service (uvicorn) serves multiple clients with identical
behavior since compilation is pure and stateless.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .driver import (
    CompileOptions, CompileResult, LutBinding, compile_source,
    default_max_cycles, run_simulation,
)
from .emitter import EmitConfig, emit_testbench
from .errors import CompileError
from .oracle import interpret_oracle


class LutBindingModel(BaseModel):
    text: str
    address_width: int = 10
    data_width: int = 16
    signed: bool = False


class OptionsModel(BaseModel):
    bus_width: int = 32
    unroll: dict[str, str | int] = Field(default_factory=dict)
    trip_overrides: dict[str, int] = Field(default_factory=dict)
    unroll_limit: int = 16
    lut_bindings: dict[str, LutBindingModel] = Field(default_factory=dict)
    emit_style: str = "constant_array"
    entity: str | None = None
    dump_ir: bool = False
    dump_netlist: bool = False
    dump_passes: bool = False

    def to_options(self) -> CompileOptions:
        if self.bus_width not in (8, 16, 32, 64):
            raise CompileError(f"bus width {self.bus_width} not in 8/16/32/64")
        return CompileOptions(
            bus_width=self.bus_width,
            unroll={k: (v if v == "full" else int(v))
                    for k, v in self.unroll.items()},
            trip_overrides=dict(self.trip_overrides),
            unroll_limit=self.unroll_limit,
            lut_bindings={k: LutBinding(v.text, v.address_width,
                                        v.data_width, v.signed)
                          for k, v in self.lut_bindings.items()},
            emit_style=self.emit_style,
            entity=self.entity,
            dump_ir=self.dump_ir,
            dump_netlist=self.dump_netlist,
            dump_passes=self.dump_passes,
        )


class CompileRequest(BaseModel):
    source: str
    filename: str = "<input>"
    options: OptionsModel = Field(default_factory=OptionsModel)
    testbench_vectors: dict | None = None  # optional self-checking TB


class CompileResponse(BaseModel):
    kernel: str
    vhdl: str
    testbench: str | None = None
    pass_log: str
    report: dict
    ir_dump: str | None = None
    netlist_dump: str | None = None
    pass_dump: str | None = None


class VectorsModel(BaseModel):
    memories: dict[str, list[int]] = Field(default_factory=dict)
    scalars: dict[str, int] = Field(default_factory=dict)


class SimRequest(BaseModel):
    source: str
    filename: str = "<input>"
    options: OptionsModel = Field(default_factory=OptionsModel)
    vectors: VectorsModel
    check_oracle: bool = False
    max_cycles: int | None = None
    trace: bool = False


class SimResponse(BaseModel):
    kernel: str
    outputs: dict[str, list[int | None]]
    metrics: dict
    oracle_match: bool | None = None
    oracle_outputs: dict[str, list[int | None]] | None = None
    differences: list[str] | None = None
    trace_jsonl: str | None = None


class ReportRequest(BaseModel):
    source: str
    filename: str = "<input>"
    options: OptionsModel = Field(default_factory=OptionsModel)


class ReportResponse(BaseModel):
    kernel: str
    report: dict
    pass_log: str


def _diagnostic(exc: CompileError, filename: str) -> HTTPException:
    return HTTPException(status_code=400, detail={
        "error": type(exc).__name__,
        "message": exc.message,
        "diagnostic": exc.format(filename),
    })


def handle_compile(req: CompileRequest) -> CompileResponse:
    result = compile_source(req.source, req.options.to_options(),
                            req.filename)
    testbench = None
    if req.testbench_vectors is not None:
        vec = req.testbench_vectors
        from .driver import lut_tables_for_oracle
        expected = interpret_oracle(
            result.ast, vec.get("memories", {}), vec.get("scalars", {}),
            lut_tables_for_oracle(result.graph))
        testbench = emit_testbench(
            result.netlist,
            EmitConfig(req.options.entity or result.name,
                       lut_style=req.options.emit_style),
            vec, expected, default_max_cycles(result.netlist))
    return CompileResponse(
        kernel=result.name, vhdl=result.vhdl, testbench=testbench,
        pass_log=result.pass_log, report=result.report,
        ir_dump=result.ir_dump, netlist_dump=result.netlist_dump,
        pass_dump=result.pass_dump)


def handle_sim(req: SimRequest) -> SimResponse:
    result = compile_source(req.source, req.options.to_options(),
                            req.filename)
    trace, outputs, metrics, oracle_out, diffs = run_simulation(
        result, req.vectors.model_dump(), req.check_oracle,
        req.max_cycles, record_trace=True)
    return SimResponse(
        kernel=result.name, outputs=outputs, metrics=metrics,
        oracle_match=(None if diffs is None else not diffs),
        oracle_outputs=oracle_out,
        differences=diffs,
        trace_jsonl=trace.to_jsonl() if req.trace else None)


def handle_report(req: ReportRequest) -> ReportResponse:
    result = compile_source(req.source, req.options.to_options(),
                            req.filename)
    return ReportResponse(kernel=result.name, report=result.report,
                          pass_log=result.pass_log)


app = FastAPI(title="minihls", version=__version__,
              description="Loop-kernel C to pipelined VHDL compile service")


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/compile", response_model=CompileResponse)
def compile_endpoint(req: CompileRequest) -> CompileResponse:
    try:
        return handle_compile(req)
    except CompileError as exc:
        raise _diagnostic(exc, req.filename)


@app.post("/simulate", response_model=SimResponse)
def simulate_endpoint(req: SimRequest) -> SimResponse:
    try:
        return handle_sim(req)
    except CompileError as exc:
        raise _diagnostic(exc, req.filename)


@app.post("/report", response_model=ReportResponse)
def report_endpoint(req: ReportRequest) -> ReportResponse:
    try:
        return handle_report(req)
    except CompileError as exc:
        raise _diagnostic(exc, req.filename)
