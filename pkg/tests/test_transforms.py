"""Constant folding, unrolling, scalar replacement, window detection."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minihls.ast_nodes import (
    Assign, Binary, For, IntLit, VarRef, print_expr, print_kernel,
)
from minihls.errors import (
    NonUniformPattern, NotConstantBounds, RestrictionError,
)
from minihls.frontend import check_restrictions, inline_calls, parse
from minihls.oracle import interpret_oracle
from minihls.driver import random_vectors
from minihls.transforms import (
    detect_window, fold_constants, predicate, scalar_replace,
    scalarized_to_kernel, unroll_full,
)

from .conftest import DEFAULT_SEED, kernel_source


def prepared(src: str):
    return fold_constants(inline_calls(check_restrictions(parse(src))))


def _expr_of(src_expr: str):
    k = parse(f"void k(int x, int *o) {{ *o = {src_expr}; }}")
    return fold_constants(k).body[0].value


class TestFold:
    def test_constant_subtree(self):
        assert _expr_of("3 * 2 + x") == Binary("+", IntLit(6), VarRef("x"))

    def test_shift_mask(self):
        assert _expr_of("(1 << 4) - 1") == IntLit(15)

    def test_algebraic_identities(self):
        assert _expr_of("x * 1") == VarRef("x")
        assert _expr_of("x + 0") == VarRef("x")
        assert _expr_of("0 + x") == VarRef("x")
        assert _expr_of("x * 0") == IntLit(0)

    @given(a=st.integers(0, 1000), b=st.integers(0, 1000),
           op=st.sampled_from(["+", "-", "*", "&", "|", "^"]))
    @settings(max_examples=50, deadline=None)
    def test_fold_matches_python(self, a, b, op):
        got = _expr_of(f"{a} {op} {b}")
        want = {"+": a + b, "-": a - b, "*": a * b,
                "&": a & b, "|": a | b, "^": a ^ b}[op]
        assert got == IntLit(want)

    def test_const_if_selects_branch(self):
        k = prepared("void k(int a, int *o) {"
                     " if (1 < 2) { *o = a; } else { *o = 0; } }")
        assert len(k.body) == 1
        assert k.body[0] == Assign(k.body[0].target, VarRef("a"))


class TestUnroll:
    def test_two_way(self):
        src = ("void k(const int A[2], int *o) {\n"
               "  int s = 0;\n"
               "  int j;\n"
               "  for (j = 0; j < 2; j++) { s = s + A[j]; }\n"
               "  *o = s;\n"
               "}\n")
        k = unroll_full(prepared(src), "j", "full")
        assert not [s for s in k.body if isinstance(s, For)]
        assigns = [s for s in k.body if isinstance(s, Assign)
                   and isinstance(s.target, VarRef) and s.target.name == "s"]
        assert len(assigns) == 2
        out = interpret_oracle(k, {"A": [10, 20]}, {})
        assert out["o"][0] == 30

    def test_dct_inner_loops_vanish(self):
        k = prepared(kernel_source("dct8"))
        k = fold_constants(unroll_full(k, "n", "full"))
        k = fold_constants(unroll_full(k, "k", "full"))
        from minihls.frontend import walk_stmts
        fors = [s for s in walk_stmts(k.body) if isinstance(s, For)]
        assert [f.var for f in fors] == ["b"]
        # 8 stores per block iteration remain
        stores = [s for s in walk_stmts(k.body) if isinstance(s, Assign)
                  and not isinstance(s.target, VarRef)]
        assert len(stores) == 8

    def test_trip_one(self):
        src = ("void k(const int A[1], int *o) {\n"
               "  int i;\n"
               "  int s = 0;\n"
               "  for (i = 0; i < 1; i++) { s = s + A[i]; }\n"
               "  *o = s;\n"
               "}\n")
        k = unroll_full(prepared(src), "i", "full")
        assert not [s for s in k.body if isinstance(s, For)]

    def test_non_constant_bounds(self):
        src = ("void k(int n, const int A[8], int *o) {\n"
               "  int i;\n"
               "  int s = 0;\n"
               "  for (i = 0; i < n; i++) { s = s + A[i]; }\n"
               "  *o = s;\n"
               "}\n")
        k = parse(src)
        with pytest.raises(NotConstantBounds):
            unroll_full(k, "i", "full")

    def test_partial_factor(self):
        src = ("void k(const unsigned char A[8], short B[8]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 8; i++) { B[i] = A[i] * 2; }\n"
               "}\n")
        k = fold_constants(unroll_full(prepared(src), "i", 2))
        loop = next(s for s in k.body if isinstance(s, For))
        _, count, step = (0, 4, 2)
        from minihls.transforms import loop_trip
        assert loop_trip(loop) == (0, 4, 2)
        vec = {"A": list(range(8))}
        assert interpret_oracle(k, vec, {}) == \
            interpret_oracle(prepared(src), vec, {})

    def test_factor_must_divide(self):
        src = ("void k(const unsigned char A[9], short B[9]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 9; i++) { B[i] = A[i]; }\n"
               "}\n")
        with pytest.raises(RestrictionError, match="divide"):
            unroll_full(prepared(src), "i", 2)


class TestScalarReplace:
    def test_fir_shape(self):
        sk = scalar_replace(prepared(kernel_source("fir")))
        assert [(ld.scalar, ld.dims[0].const) for ld in sk.loads] == [
            ("A0", 0), ("A1", 1), ("A2", 2), ("A3", 3), ("A4", 4)]
        assert all(ld.dims[0].coeff == 1 for ld in sk.loads)
        assert len(sk.stores) == 1
        assert sk.stores[0].array == "C"
        store_value = next(
            s.value for s in sk.compute
            if isinstance(s, Assign) and isinstance(s.target, VarRef)
            and s.target.name == sk.stores[0].scalar)
        assert print_expr(store_value) == \
            "3 * A0 + 5 * A1 + 7 * A2 + 9 * A3 - A4"

    def test_no_array_access(self):
        sk = scalar_replace(prepared(
            "void k(int a, int *o) { *o = a + 1; }"))
        assert sk.loads == () and len(sk.stores) == 1
        assert sk.loop.indices == ()

    def test_feedback_detection(self):
        sk = scalar_replace(prepared(kernel_source("accumulate")))
        assert len(sk.feedbacks) == 1
        fb = sk.feedbacks[0]
        assert (fb.var, fb.prev, fb.next) == ("sum", "sum_prev", "sum_next")
        assert fb.init == 0
        assert [ld.scalar for ld in sk.loads] == ["A0"]

    def test_idempotent(self):
        for name in ("fir", "accumulate", "mul_acc"):
            ast = prepared(kernel_source(name))
            sk = scalar_replace(ast)
            rebuilt = scalarized_to_kernel(sk, ast)
            again = scalar_replace(rebuilt)
            assert again == sk

    def test_scalarized_form_is_equivalent(self):
        ast = prepared(kernel_source("fir"))
        sk = scalar_replace(ast)
        rebuilt = scalarized_to_kernel(sk, ast)
        vec = random_vectors(ast, DEFAULT_SEED, 0)
        assert interpret_oracle(rebuilt, **vec_args(vec, ast)) == \
            interpret_oracle(ast, **vec_args(vec, ast))


def vec_args(vec, ast):
    return {"memories": vec["memories"], "scalars": vec["scalars"]}


class TestSemanticsPreservation:
    @pytest.mark.parametrize("name", ["fir", "accumulate", "bit_correlator",
                                      "mul_acc", "dct8"])
    def test_fold_and_unroll_preserve(self, name):
        base = inline_calls(check_restrictions(parse(kernel_source(name))))
        folded = fold_constants(base)
        for i in range(25):
            vec = random_vectors(base, DEFAULT_SEED, i)
            want = interpret_oracle(base, vec["memories"], vec["scalars"])
            assert interpret_oracle(folded, vec["memories"],
                                    vec["scalars"]) == want
        if name == "dct8":
            unrolled = fold_constants(unroll_full(folded, "n", "full"))
            unrolled = fold_constants(unroll_full(unrolled, "k", "full"))
            for i in range(25):
                vec = random_vectors(base, DEFAULT_SEED, i)
                want = interpret_oracle(base, vec["memories"], vec["scalars"])
                assert interpret_oracle(unrolled, vec["memories"],
                                        vec["scalars"]) == want


class TestDetectWindow:
    def test_fir_window(self):
        sk = scalar_replace(prepared(kernel_source("fir")))
        ws = detect_window(sk, "A", 8)
        assert ws.shape == (5,) and ws.stride == (1,)
        assert ws.data_width == 8 and ws.bus_width == 8
        overlap = ws.shape[0] - ws.stride[0]
        assert overlap == 4

    def test_single_load(self):
        sk = scalar_replace(prepared(
            "void k(const unsigned char A[4], short B[4]) {\n"
            "  int i;\n"
            "  for (i = 0; i < 4; i++) { B[i] = A[i]; }\n"
            "}\n"))
        ws = detect_window(sk, "A", 8)
        assert ws.shape == (1,) and ws.stride == (1,)

    def test_strided_pair(self):
        # derived by enumerating addresses for i = 0..3: windows {0,1},
        # {2,3}, {4,5}, {6,7} -> shape 2, consecutive windows 2 apart
        src = ("void k(const unsigned char A[16], short B[8]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 8; i++) { B[i] = A[2*i] + A[2*i+1]; }\n"
               "}\n")
        sk = scalar_replace(prepared(src))
        ws = detect_window(sk, "A", 8)
        addresses = [[2 * i, 2 * i + 1] for i in range(4)]
        spans = [max(a) - min(a) + 1 for a in addresses]
        strides = [b[0] - a[0] for a, b in zip(addresses, addresses[1:])]
        assert ws.shape == (max(spans),)
        assert ws.stride == (strides[0],)
        assert ws.shape == (2,) and ws.stride == (2,)

    def test_non_uniform_pattern(self):
        src = ("void k(const unsigned char A[20], short B[5]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 5; i++) { B[i] = A[i] + A[2*i]; }\n"
               "}\n")
        sk = scalar_replace(prepared(src))
        with pytest.raises(NonUniformPattern):
            detect_window(sk, "A", 8)

    def test_bus_width_rounding(self):
        sk = scalar_replace(prepared(kernel_source("mul_acc")))
        ws = detect_window(sk, "a", 8)  # 12-bit data cannot ride an 8-bit bus
        assert ws.bus_width == 16 and ws.elems_per_word == 1

    def test_window_coverage_property(self):
        # every accessed address is covered by exactly the windows whose
        # anchor range contains it; the union equals the accessed set
        for name, arr in (("fir", "A"), ("bit_correlator", "din"),
                          ("dct8", "x")):
            ast = prepared(kernel_source(name))
            sk_res = scalar_replace(_auto(ast))
            ws = detect_window(sk_res, arr, 8)
            loop = sk_res.loop
            assert len(loop.indices) == 1
            ix = loop.indices[0]
            accessed = set()
            windows = []
            loads = [ld for ld in sk_res.loads if ld.array == arr]
            for it in range(ix.count):
                iv = ix.lower + it * ix.step
                addrs = {ld.dims[0].coeff * iv + ld.dims[0].const
                         for ld in loads}
                windows.append(addrs)
                accessed |= addrs
            anchor = [min(w) for w in windows]
            union = set().union(*windows)
            assert union == accessed
            for addr in accessed:
                containing = [k for k, w in enumerate(windows)
                              if addr in w]
                in_range = [k for k, a in enumerate(anchor)
                            if a <= addr < a + ws.shape[0]]
                assert containing == in_range


def _auto(ast):
    from minihls.driver import _auto_unroll
    return _auto_unroll(ast, 16, [])


class TestPredicate:
    def test_branch_free(self):
        sk = predicate(scalar_replace(prepared(kernel_source("mul_acc"))))
        from minihls.ast_nodes import If, Select
        from minihls.frontend import stmt_exprs, walk_exprs, walk_stmts
        assert not [s for s in walk_stmts(sk.compute) if isinstance(s, If)]
        selects = [e for s in walk_stmts(sk.compute)
                   for expr in stmt_exprs(s) for e in walk_exprs(expr)
                   if isinstance(e, Select)]
        assert selects, "if-conversion produced no select"
