"""SSA lowering, width inference, scheduling, LUT binding."""

import pytest

from minihls.dataflow import (
    Const, Port, Ref, bind_lut, dump_graph, evaluate, feedback_cycle_nodes,
    infer_widths, lower, run_iterations, schedule, unbound_tables,
)
from minihls.driver import random_vectors
from minihls.errors import (
    FeedbackTooDeep, InitFileError, LoweringError, WidthOverflow,
)
from minihls.frontend import check_restrictions, inline_calls, parse
from minihls.luts import builtin_cos, parse_init_file
from minihls.oracle import interpret_oracle
from minihls.transforms import (
    detect_window, fold_constants, predicate, scalar_replace,
)

from .conftest import DEFAULT_SEED, compiled, kernel_source

CORPUS_GRAPH = ["fir", "accumulate", "bit_correlator", "mul_acc", "dct8",
                "lut_map", "cos_wave"]


def graph_of(src: str, lut_specs=None, schedule_it=True):
    ast = fold_constants(inline_calls(check_restrictions(parse(src))))
    from minihls.driver import _auto_unroll
    ast = _auto_unroll(ast, 16, [])
    sk = predicate(scalar_replace(ast))
    g = lower(sk, lut_specs)
    if schedule_it:
        g = schedule(infer_widths(g))
    return ast, sk, g


class TestLower:
    def test_fir_census(self):
        _, _, g = graph_of(kernel_source("fir"), schedule_it=False)
        census = g.opcode_census()
        assert census["MUL"] == 4
        assert census["ADD"] == 3
        assert census["SUB"] == 1

    def test_identity_single_copy(self):
        _, _, g = graph_of("void k(uint8_t a, uint8_t *o) { *o = a; }")
        census = g.opcode_census()
        assert census == {"COPY": 1}  # the mandatory output latch

    def test_accumulator_cycle(self):
        _, _, g = graph_of(kernel_source("accumulate"))
        cycle = feedback_cycle_nodes(g)
        assert cycle, "no feedback cycle found"
        opcodes = {g.nodes[i].opcode for i in cycle}
        assert "LPR" in opcodes and "SNX" in opcodes and "ADD" in opcodes
        assert len(g.feedback_pairs) == 1

    def test_undefined_value(self):
        src = "void k(int a, int *o) { int t; *o = t; }"
        with pytest.raises(LoweringError, match="undefined"):
            graph_of(src)

    def test_branch_requires_predication(self):
        ast = fold_constants(check_restrictions(parse(
            kernel_source("mul_acc"))))
        sk = scalar_replace(inline_calls(ast))
        with pytest.raises(LoweringError, match="predication"):
            lower(sk)


class TestPredicationGraphs:
    def test_mul_acc_select(self):
        _, _, g = graph_of(kernel_source("mul_acc"))
        census = g.opcode_census()
        assert census.get("SELECT", 0) == 1
        assert census.get("MUL", 0) == 1

    def test_empty_else_uses_prior(self):
        src = ("void k(const uint1_t c[4], const uint8_t v[4], short o[4]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 4; i++) {\n"
               "    int t = 5;\n"
               "    if (c[i]) { t = v[i]; }\n"
               "    o[i] = t;\n"
               "  }\n"
               "}\n")
        ast, sk, g = graph_of(src)
        out = interpret_oracle(ast, {"c": [1, 0, 1, 0],
                                     "v": [9, 9, 7, 9]}, {})
        assert out["o"] == [9, 5, 7, 5]

    def test_nested_if_exhaustive(self):
        src = ("void k(const uint1_t c0[4], const uint1_t c1[4],"
               " short o[4]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 4; i++) {\n"
               "    int t = 0;\n"
               "    if (c0[i]) {\n"
               "      if (c1[i]) { t = 3; } else { t = 2; }\n"
               "    } else {\n"
               "      if (c1[i]) { t = 1; }\n"
               "    }\n"
               "    o[i] = t;\n"
               "  }\n"
               "}\n")
        ast, sk, g = graph_of(src)
        census = g.opcode_census()
        assert census.get("SELECT", 0) >= 3  # two levels cascade
        # exhaustive over all four condition combinations
        c0 = [0, 0, 1, 1]
        c1 = [0, 1, 0, 1]
        out = interpret_oracle(ast, {"c0": c0, "c1": c1}, {})
        assert out["o"] == [0, 1, 2, 3]
        firings = [{"c00": a, "c10": b} for a, b in zip(c0, c1)]
        results = run_iterations(g, firings)
        assert [r[g.outputs[0][0]] for r in results] == [0, 1, 2, 3]


def max_interval(graph, input_ranges):
    """Independent max-value oracle: interval propagation with exact
    integer arithmetic over the graph."""
    iv: dict[int, tuple[int, int]] = {}

    def op_iv(op):
        if isinstance(op, Const):
            return op.value, op.value
        if isinstance(op, Port):
            return input_ranges[op.name]
        return iv[op.id]

    for n in graph.nodes:
        if n.opcode == "LPR":
            lo = -(1 << (n.width - 1)) if n.signed else 0
            hi = (1 << (n.width - 1)) - 1 if n.signed else (1 << n.width) - 1
            iv[n.id] = (lo, hi)
            continue
        if n.opcode == "SNX":
            lo = -(1 << (n.width - 1)) if n.signed else 0
            hi = (1 << (n.width - 1)) - 1 if n.signed else (1 << n.width) - 1
            iv[n.id] = (lo, hi)
            continue
        ops = [op_iv(o) for o in n.operands]
        if n.opcode == "ADD":
            iv[n.id] = (ops[0][0] + ops[1][0], ops[0][1] + ops[1][1])
        elif n.opcode == "SUB":
            iv[n.id] = (ops[0][0] - ops[1][1], ops[0][1] - ops[1][0])
        elif n.opcode == "MUL":
            prods = [a * b for a in ops[0] for b in ops[1]]
            iv[n.id] = (min(prods), max(prods))
        elif n.opcode in ("AND", "OR", "XOR"):
            w = n.width
            lo = -(1 << (w - 1)) if n.signed else 0
            hi = (1 << (w - 1)) - 1 if n.signed else (1 << w) - 1
            iv[n.id] = (lo, hi)
        elif n.opcode == "SHL":
            k = n.operands[1].value
            iv[n.id] = (ops[0][0] << k, ops[0][1] << k)
        elif n.opcode == "SHR":
            k = n.operands[1].value
            iv[n.id] = (ops[0][0] >> k, ops[0][1] >> k)
        elif n.opcode in ("EQ", "NE", "LT", "LE", "GT", "GE", "NOT"):
            iv[n.id] = (0, 1)
        elif n.opcode == "SELECT":
            iv[n.id] = (min(ops[1][0], ops[2][0]), max(ops[1][1], ops[2][1]))
        elif n.opcode == "COPY":
            if n.target is not None:
                lo = n.target.min
                hi = n.target.max
                src = ops[0]
                iv[n.id] = (max(lo, src[0]) if src[0] >= lo and src[1] <= hi
                            else lo,
                            min(hi, src[1]) if src[0] >= lo and src[1] <= hi
                            else hi)
            else:
                iv[n.id] = ops[0]
        elif n.opcode == "LUT":
            w, s = n.lut.data_width, n.lut.signed
            lo = -(1 << (w - 1)) if s else 0
            hi = (1 << (w - 1)) - 1 if s else (1 << w) - 1
            iv[n.id] = (lo, hi)
        else:
            raise AssertionError(n.opcode)
    return iv


class TestWidthRules:
    def test_u8_plus_u8(self):
        _, _, g = graph_of(
            "void k(uint8_t a, uint8_t b, short *o) { *o = a + b; }",
            schedule_it=False)
        g = infer_widths(g)
        add = next(n for n in g.nodes if n.opcode == "ADD")
        assert add.width == 9 and not add.signed

    def test_u8_times_u8(self):
        _, _, g = graph_of(
            "void k(uint8_t a, uint8_t b, int *o) { *o = a * b; }",
            schedule_it=False)
        g = infer_widths(g)
        mul = next(n for n in g.nodes if n.opcode == "MUL")
        assert mul.width == 16 and not mul.signed

    def test_const_multiplier_width(self):
        # width(3) = 2 bits; max-value oracle: 3 * 255 = 765 < 1024
        _, _, g = graph_of(
            "void k(uint8_t a, short *o) { *o = 3 * a; }",
            schedule_it=False)
        g = infer_widths(g)
        mul = next(n for n in g.nodes if n.opcode == "MUL")
        assert mul.width == 10
        iv = max_interval(g, {"a": (0, 255)})
        assert iv[mul.id][1] == 765 < 1024

    def test_width_safety_over_corpus(self):
        for name in CORPUS_GRAPH:
            res = compiled(name)
            g = res.graph
            ranges = {}
            for p in g.inputs:
                lo = -(1 << (p.width - 1)) if p.signed else 0
                hi = ((1 << (p.width - 1)) - 1 if p.signed
                      else (1 << p.width) - 1)
                ranges[p.name] = (lo, hi)
            iv = max_interval(g, ranges)
            cycle = feedback_cycle_nodes(g)
            for n in g.nodes:
                if n.id in cycle or n.opcode in ("LPR", "SNX"):
                    continue  # wraparound at the declared width is defined
                lo = -(1 << (n.width - 1)) if n.signed else 0
                hi = ((1 << (n.width - 1)) - 1 if n.signed
                      else (1 << n.width) - 1)
                assert lo <= iv[n.id][0] and iv[n.id][1] <= hi, \
                    f"{name}: node {n.id} {n.opcode} interval {iv[n.id]}" \
                    f" outside {n.width} bits"

    def test_width_overflow(self):
        src = ("void k(unsigned a, unsigned b, unsigned c, int *o)"
               " { *o = a * b * c; }")
        with pytest.raises(WidthOverflow):
            graph_of(src)


class TestSchedule:
    def test_mul_add_balance(self):
        # a*b + c: product at stage 1, c delayed once, sum at stage 2
        _, _, g = graph_of(
            "void k(uint8_t a, const uint8_t b[4], const uint8_t c[4],"
            " int o[4]) {\n"
            "  int i;\n"
            "  for (i = 0; i < 4; i++) { o[i] = a * b[i] + c[i]; }\n"
            "}\n")
        mul = next(n for n in g.nodes if n.opcode == "MUL")
        add = next(n for n in g.nodes if n.opcode == "ADD")
        delays = [n for n in g.nodes if n.opcode == "COPY" and n.latched]
        assert mul.stage == 1 and add.stage == 2
        assert g.depth == 2
        assert len(delays) == 1  # c waits one stage for the product

    def test_identity_depth(self):
        _, _, g = graph_of("void k(uint8_t a, uint8_t *o) { *o = a; }")
        assert g.depth == 1

    def test_fir_depth(self):
        g = compiled("fir").graph
        assert g.depth == 4  # multiply layer + 3 binary reduction levels

    def test_balance_invariant(self):
        # independent path-depth check: every non-constant operand path
        # into a node carries the same number of registers
        for name in CORPUS_GRAPH:
            g = compiled(name).graph
            cycle = feedback_cycle_nodes(g)
            depth: dict[int, int] = {}
            for n in g.nodes:
                if n.id in cycle and n.opcode != "SNX":
                    continue
                ops = []
                for op in n.operands:
                    if isinstance(op, Ref):
                        if op.id in cycle and g.nodes[op.id].opcode \
                                not in ("LPR", "SNX"):
                            continue
                        ops.append(depth[op.id])
                    elif isinstance(op, Port):
                        p = g.port(op.name)
                        if p.kind == "window":
                            ops.append(0)
                if n.opcode == "LPR":
                    depth[n.id] = (n.stage or 0)
                    continue
                assert len(set(ops)) <= 1, \
                    f"{name}: node {n.id} has unbalanced depths {ops}"
                base = ops[0] if ops else 0
                depth[n.id] = base + (1 if n.latched else 0)

    def test_accumulator_initiation_interval_one(self):
        # the feedback register updates every firing: II = 1
        g = compiled("accumulate").graph
        lpr, snx = g.feedback_pairs[0]
        assert g.nodes[snx].stage - g.nodes[lpr].stage == 1

    def test_feedback_too_deep_with_lut(self):
        src = ('void k(const uint1_t e[4], short *o) {\n'
               '  int s = 0;\n'
               '  int i;\n'
               '  for (i = 0; i < 4; i++) {\n'
               '    s = lut("cos", (s + e[i]) % 1024);\n'
               '  }\n'
               '  *o = s;\n'
               '}\n')
        ast = fold_constants(inline_calls(check_restrictions(parse(src))))
        sk = predicate(scalar_replace(ast))
        g = lower(sk, {"cos": builtin_cos()})
        with pytest.raises(FeedbackTooDeep):
            schedule(infer_widths(g))

    def test_ssa_and_acyclic(self):
        for name in CORPUS_GRAPH:
            g = compiled(name).graph
            g.check_ssa()
            assert g.toposort_ok()


class TestEquivalence:
    @pytest.mark.parametrize("name", CORPUS_GRAPH)
    def test_graph_matches_oracle(self, name):
        """Firing the graph over the whole iteration space reproduces the
        reference interpreter's outputs."""
        res = compiled(name)
        ast, sk, g = res.ast, res.scalarized, res.graph
        arrays = {a.name: a for a in ast.arrays}
        from minihls.driver import lut_tables_for_oracle
        for trial in range(5):
            vec = random_vectors(ast, DEFAULT_SEED + 1, trial)
            want = interpret_oracle(ast, vec["memories"], vec["scalars"],
                                    lut_tables_for_oracle(g))
            loop = sk.loop
            spaces = [range(ix.count) for ix in loop.indices] or [range(1)]
            import itertools
            firings = []
            for point in itertools.product(*spaces):
                ivals = {ix.var: ix.lower + k * ix.step
                         for ix, k in zip(loop.indices, point)}
                inputs = {}
                for ld in sk.loads:
                    addr = 0
                    decl = arrays[ld.array]
                    for d, ext in zip(ld.dims, decl.extents):
                        comp = (d.coeff * ivals.get(d.var, 0) + d.const
                                if d.var else d.const)
                        addr = addr * ext + comp
                    raw = vec["memories"][ld.array][addr]
                    inputs[ld.scalar] = decl.element.wrap(
                        raw & ((1 << decl.element.width) - 1))
                for pname, _ in sk.scalar_ins:
                    inputs[pname] = vec["scalars"][pname]
                firings.append(inputs)
            results = run_iterations(g, firings, check_widths=True)
            # replay stores into images
            got = {}
            for st in sk.stores:
                if st.array in arrays:
                    size = 1
                    for e in arrays[st.array].extents:
                        size *= e
                    got.setdefault(st.array, [None] * size)
                else:
                    got.setdefault(st.array, [None])
            for point, out in zip(itertools.product(*spaces), results):
                ivals = {ix.var: ix.lower + k * ix.step
                         for ix, k in zip(loop.indices, point)}
                for st in sk.stores:
                    if st.array in arrays:
                        decl = arrays[st.array]
                        addr = 0
                        for d, ext in zip(st.dims, decl.extents):
                            comp = (d.coeff * ivals.get(d.var, 0) + d.const
                                    if d.var else d.const)
                            addr = addr * ext + comp
                        width = decl.element.width
                    else:
                        addr = 0
                        width = st.ctype.width
                    got[st.array][addr] = out[st.scalar] & ((1 << width) - 1)
            assert got == want, f"{name} trial {trial}"


class TestLutBinding:
    def test_good_init_file(self):
        text = "\n".join(str(v % 400) for v in range(1024))
        spec = parse_init_file("t", text, 10, 16, False)
        assert len(spec.contents) == 1024
        assert spec.contents[17] == 17

    def test_wrong_length(self):
        text = "\n".join("0" for _ in range(1023))
        with pytest.raises(InitFileError, match="expected 1024"):
            parse_init_file("t", text, 10, 16, False)

    def test_value_exceeds_width(self):
        rows = ["0"] * 1024
        rows[5] = "70000"
        with pytest.raises(InitFileError, match="exceeds 16 bits"):
            parse_init_file("t", "\n".join(rows), 10, 16, False)

    def test_comments_and_hex(self):
        rows = ["# header", "0x10", "16"] + ["0"] * 1022
        spec = parse_init_file("t", "\n".join(rows), 10, 16, False)
        assert spec.contents[0] == 16 and spec.contents[1] == 16

    def test_bind_and_unbound(self):
        src = ('void k(const uint10_t x[4], short y[4]) {\n'
               '  int i;\n'
               '  for (i = 0; i < 4; i++) { y[i] = lut("cos", x[i]); }\n'
               '}\n')
        ast = fold_constants(inline_calls(check_restrictions(parse(src))))
        sk = predicate(scalar_replace(ast))
        with pytest.raises(InitFileError, match="unbound lookup table"):
            lower(sk)
        g = lower(sk, {"cos": builtin_cos()})
        assert unbound_tables(g) == []
        # re-binding is idempotent
        bind_lut(g, builtin_cos())
        lut = next(n for n in g.nodes if n.opcode == "LUT")
        assert lut.lut.data_width == 16 and lut.lut.signed

    def test_index_wider_than_address(self):
        src = ('void k(const uint16_t x[4], short y[4]) {\n'
               '  int i;\n'
               '  for (i = 0; i < 4; i++) { y[i] = lut("cos", x[i]); }\n'
               '}\n')
        ast = fold_constants(inline_calls(check_restrictions(parse(src))))
        sk = predicate(scalar_replace(ast))
        g = lower(sk, {"cos": builtin_cos()})
        with pytest.raises(InitFileError, match="address"):
            infer_widths(g)


class TestDump:
    def test_stable_format(self):
        g = compiled("fir").graph
        text = dump_graph(g)
        assert text == dump_graph(g)
        for n in g.nodes:
            assert f"n{n.id}: {n.opcode}(" in text
