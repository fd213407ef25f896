"""Datapath netlist fragment from a scheduled dataflow graph.

Every latched node becomes a combinational op plus a free-running stage
register; COPY delay nodes become bare registers; feedback LPR/SNX pairs
collapse into one enable-gated register (the enable is the pipeline valid
bit at the feedback stage, so bubbles never corrupt an accumulator).  A
valid shift register tracks in-flight firings; `result_valid` strobes when
a firing's outputs reach the last stage.
"""

from __future__ import annotations

from .dataflow import COMPARISONS, Const, DataflowGraph, Node, Port, Ref
from .errors import LoweringError
from .netlist import Comb, Fragment, SigDecl


def build_datapath(graph: DataflowGraph, tap_signal: dict[str, str],
                   scalar_ports: dict[str, tuple[int, bool]],
                   store_widths: list[int]) -> Fragment:
    """`tap_signal` maps window port names to smart-buffer tap signals;
    `scalar_ports` maps run-constant inputs to (width, signed);
    `store_widths` gives each output's memory element width in order."""
    frag = Fragment("datapath")
    frag.require("fire", 1)

    sig_decl: dict[str, SigDecl] = {}

    def declare(name, width, signed=False, control=False) -> SigDecl:
        d = SigDecl(name, width, signed, control)
        sig_decl[name] = d
        return d

    for p in graph.inputs:
        if p.kind == "window":
            sig = tap_signal[p.name]
            frag.require(sig, p.width)
            sig_decl[sig] = SigDecl(sig, p.width, p.signed)
        else:
            w, s = scalar_ports[p.name]
            frag.require(p.name, w)
            sig_decl[p.name] = SigDecl(p.name, w, s)

    fb_reg: dict[str, str] = {}
    for lpr_id, _snx_id in graph.feedback_pairs:
        node = graph.nodes[lpr_id]
        fb_reg[node.var] = f"dp_fb_{node.var}"

    value_sig: dict[int, str] = {}
    is_control: dict[int, bool] = {}
    tmp_n = [0]

    def tmp(width, signed=False, control=False) -> SigDecl:
        tmp_n[0] += 1
        return declare(f"dp_x{tmp_n[0]}", width, signed, control)

    def operand(op, want_control=False):
        """Netlist operand for a dataflow operand (int consts pass through);
        control/data domains are converted explicitly."""
        if isinstance(op, Const):
            return op.value
        if isinstance(op, Port):
            p = graph.port(op.name)
            return tap_signal[op.name] if p.kind == "window" else op.name
        sig = value_sig[op.id]
        ctl = is_control[op.id]
        if ctl and not want_control:
            d = tmp(1)
            frag.comb("B2U", d, (sig,))
            return d.name
        return sig

    chain_len = graph.depth or 1
    for lpr_id, snx_id in graph.feedback_pairs:
        chain_len = max(chain_len, graph.nodes[snx_id].stage)
    declare("dp_valid_0", 1, control=True)
    frag.comb("COPY", sig_decl["dp_valid_0"], ("fire",))
    for k in range(1, chain_len + 1):
        q = declare(f"dp_valid_{k}", 1, control=True)
        frag.reg(q, f"dp_valid_{k - 1}", kind="control")

    def extend_to(op, width, signed):
        """COPY an operand to an exact (width, signed) if it differs."""
        if isinstance(op, int):
            return op
        d = sig_decl[op]
        if d.width == width and d.signed == signed and not d.control:
            return op
        out = tmp(width, signed)
        frag.comb("COPY", out, (op,))
        return out.name

    latched = copy_delays = 0
    for n in graph.nodes:
        if n.opcode == "LPR":
            value_sig[n.id] = fb_reg[n.var]
            is_control[n.id] = False
            if fb_reg[n.var] not in sig_decl:
                declare(fb_reg[n.var], n.width, n.signed)
            continue
        if n.opcode == "SNX":
            reg_name = fb_reg[n.var]
            if reg_name not in sig_decl:
                declare(reg_name, n.width, n.signed)
            d_sig = extend_to(operand(n.operands[0]), n.width, n.signed)
            if isinstance(d_sig, int):
                cd = tmp(n.width, n.signed)
                frag.comb("COPY", cd, (d_sig,))
                d_sig = cd.name
            lpr_node = next(graph.nodes[l] for l, s in graph.feedback_pairs
                            if s == n.id)
            en = f"dp_valid_{n.stage - 1}" if n.stage > 1 else "dp_valid_0"
            frag.reg(sig_decl[reg_name], d_sig, reset=lpr_node.init, en=en,
                     kind="feedback")
            value_sig[n.id] = reg_name
            is_control[n.id] = False
            continue
        if n.opcode == "COPY" and n.latched and n.target is None:
            # pure pipeline delay register; keeps its source's domain
            op0 = n.operands[0]
            ctl = isinstance(op0, Ref) and is_control.get(op0.id, False)
            src = operand(op0, want_control=ctl)
            if isinstance(src, int):
                cd = tmp(n.width, n.signed)
                frag.comb("COPY", cd, (src,))
                src = cd.name
            q = declare(f"dp_n{n.id}_q", n.width, n.signed, control=ctl)
            frag.reg(q, src, kind="copy_delay")
            value_sig[n.id] = q.name
            is_control[n.id] = ctl
            copy_delays += 1
            continue

        comb_sig = declare(f"dp_n{n.id}", n.width, n.signed,
                           control=n.opcode in COMPARISONS)
        if n.opcode == "LUT":
            from .netlist import LutRom
            q = declare(f"dp_n{n.id}_q", n.width, n.signed)
            frag.luts.append(LutRom(n.lut, operand(n.operands[0]), q))
            sig_decl.pop(comb_sig.name, None)
            value_sig[n.id] = q.name
            is_control[n.id] = False
            latched += 1
            continue
        if n.opcode == "SELECT":
            cond = operand(n.operands[0], want_control=True)
            t = extend_to(operand(n.operands[1]), n.width, n.signed)
            f_ = extend_to(operand(n.operands[2]), n.width, n.signed)
            t = _materialize(frag, tmp, t, n.width, n.signed)
            f_ = _materialize(frag, tmp, f_, n.width, n.signed)
            frag.comb("MUX", comb_sig, (cond, t, f_))
        elif n.opcode == "COPY":
            frag.comb("COPY", comb_sig, (operand(n.operands[0]),))
        elif n.opcode == "NOT":
            frag.comb("NOT", comb_sig, (operand(n.operands[0],
                                                want_control=True),))
        elif n.opcode in ("SHL", "SHR"):
            frag.comb(n.opcode, comb_sig,
                      (operand(n.operands[0]), n.operands[1].value))
        else:
            frag.comb(n.opcode, comb_sig,
                      (operand(n.operands[0]), operand(n.operands[1])))

        if n.latched:
            q = declare(f"dp_n{n.id}_q", n.width, n.signed,
                        control=comb_sig.control)
            frag.reg(q, comb_sig.name, kind="dp_latch")
            value_sig[n.id] = q.name
            latched += 1
        else:
            value_sig[n.id] = comb_sig.name
        is_control[n.id] = comb_sig.control

    multi = len(graph.outputs) > 1
    result_signals = []
    for k, ((name, op), width) in enumerate(zip(graph.outputs, store_widths)):
        sig = operand(op)
        out_name = f"result_data_{k}" if multi else "result_data"
        d = declare(out_name, width)
        src = extend_to(sig, width, sig_decl[sig].signed
                        if isinstance(sig, str) else False)
        if isinstance(src, int):
            frag.comb("COPY", d, (src,))
        else:
            frag.comb("COPY", d, (src,))
        result_signals.append(out_name)

    rv = declare("result_valid", 1, control=True)
    frag.comb("COPY", rv, (f"dp_valid_{graph.depth}",))

    frag_meta = {"latched": latched, "copy_delays": copy_delays,
                 "result_signals": result_signals}
    frag.meta = frag_meta
    return frag


def _materialize(frag, tmp, op, width, signed):
    """MUX arms must be signals of the result width."""
    if isinstance(op, int):
        d = tmp(width, signed)
        frag.comb("COPY", d, (op,))
        return d.name
    return op
