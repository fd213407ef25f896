"""Parser, restriction checking, and inlining."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minihls.ast_nodes import (
    ArrayRef, Assign, Binary, Call, Deref, For, IntLit, LutExpr, VarRef,
    print_kernel,
)
from minihls.errors import (
    RestrictionError, SourceSyntaxError, UnsupportedConstruct,
)
from minihls.frontend import (
    affine_form, check_restrictions, inline_calls, parse, stmt_exprs,
    walk_exprs, walk_stmts,
)

from .conftest import CORPUS, kernel_source


def _exprs(kernel):
    for s in walk_stmts(kernel.body):
        for e in stmt_exprs(s):
            yield from walk_exprs(e)


class TestParse:
    def test_fir_shape(self):
        k = parse(kernel_source("fir"))
        fors = [s for s in walk_stmts(k.body) if isinstance(s, For)]
        assert len(fors) == 1
        loads = [e for e in _exprs(k) if isinstance(e, ArrayRef)
                 and e.name == "A"]
        assert len(loads) == 5
        stores = [s for s in walk_stmts(k.body)
                  if isinstance(s, Assign) and isinstance(s.target, ArrayRef)]
        assert len(stores) == 1 and stores[0].target.name == "C"

    def test_identity_kernel(self):
        k = parse("void k(int a, int* out){ *out = a; }")
        assert len(k.body) == 1
        assert isinstance(k.body[0], Assign)
        assert not [s for s in walk_stmts(k.body) if isinstance(s, For)]

    def test_recursion_rejected(self):
        src = """
        int f(int x) { return f(x - 1); }
        void k(int a, int *out) { *out = f(a); }
        """
        with pytest.raises(UnsupportedConstruct, match="recursion"):
            parse(src)

    def test_mutual_recursion_rejected(self):
        src = """
        int f(int x) { return g(x); }
        int g(int x) { return f(x); }
        void k(int a, int *out) { *out = f(a); }
        """
        with pytest.raises(UnsupportedConstruct, match="recursion"):
            parse(src)

    def test_pointer_param_is_output(self):
        k = parse("void main_df(int A0, int* Tmp0) { *Tmp0 = 3 * A0; }")
        k = check_restrictions(k)
        params = {p.name: p for p in k.params}
        assert params["Tmp0"].direction == "out"
        assert params["A0"].direction == "in"

    @pytest.mark.parametrize("src,what", [
        ("void k(int *o){ while (1) { *o = 1; } }", "while"),
        ("void k(int *o){ float x; *o = 1; }", "float"),
        ("void k(int *o){ int x = ~3; *o = x; }", "complement"),
        ("void k(int *o){ goto end; }", "goto"),
        ("void k(uint40_t a, int *o){ *o = a; }", "wider than 32"),
    ])
    def test_rejected_constructs(self, src, what):
        with pytest.raises(UnsupportedConstruct, match=what):
            parse(src)

    def test_syntax_error_has_position(self):
        with pytest.raises(SourceSyntaxError) as exc:
            parse("void k(int a, int *o) {\n  *o = a +;\n}")
        assert exc.value.line == 2
        assert exc.value.col > 0
        assert "k.c:2:" in exc.value.format("k.c")

    def test_define_const_expr_extents(self):
        k = parse("#define N 4\n"
                  "void k(const int A[N + 1], int B[N]) {\n"
                  "  int i;\n"
                  "  for (i = 0; i < N; i++) { B[i] = A[i] + A[i+1]; }\n"
                  "}\n")
        arrays = {a.name: a for a in k.arrays}
        assert arrays["A"].extents == (5,)
        assert arrays["B"].extents == (4,)

    @pytest.mark.parametrize("name", CORPUS + ["blur3"])
    def test_round_trip(self, name):
        k = parse(kernel_source(name))
        again = parse(print_kernel(k))
        assert again == k

    def test_round_trip_after_checking(self):
        k = check_restrictions(parse(kernel_source("fir")))
        assert check_restrictions(parse(print_kernel(k))) == k


class TestRestrictions:
    def test_non_affine_subscript(self):
        src = ("void k(const int A[25], int B[5]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 5; i++) { B[i] = A[i * i]; }\n"
               "}\n")
        with pytest.raises(RestrictionError, match="non-affine"):
            check_restrictions(parse(src))

    def test_affine_with_coefficient(self):
        src = ("void k(const int A[11], int B[5]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 5; i++) { B[i] = A[2 * i + 1]; }\n"
               "}\n")
        k = check_restrictions(parse(src))
        ref = next(e for e in _exprs(k)
                   if isinstance(e, ArrayRef) and e.name == "A")
        coeffs, const = affine_form(ref.indices[0], ["i"])
        assert coeffs == {"i": 2} and const == 1

    def test_pointer_value_use_rejected(self):
        src = "void k(int a, int *o) { *o = a; int t = o + 1; }"
        with pytest.raises((RestrictionError, SourceSyntaxError)):
            check_restrictions(parse(
                "void k(int a, int *o) { int t; t = o; *o = t; }"))

    def test_array_in_out_conflict(self):
        src = ("void k(int A[4]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 4; i++) { A[i] = A[i] + 1; }\n"
               "}\n")
        with pytest.raises(RestrictionError, match="both read and written"):
            check_restrictions(parse(src))

    def test_conditional_array_store_rejected(self):
        src = ("void k(const int A[4], int B[4]) {\n"
               "  int i;\n"
               "  for (i = 0; i < 4; i++) {\n"
               "    if (A[i]) { B[i] = 1; }\n"
               "  }\n"
               "}\n")
        with pytest.raises(RestrictionError, match="conditional store"):
            check_restrictions(parse(src))

    def test_division_by_non_power_of_two(self):
        src = "void k(int a, int *o) { *o = a / 3; }"
        with pytest.raises(RestrictionError, match="powers of two"):
            check_restrictions(parse(src))

    def test_shift_by_variable(self):
        src = "void k(int a, int b, int *o) { *o = a << b; }"
        with pytest.raises(RestrictionError, match="non-constant"):
            check_restrictions(parse(src))

    def test_undeclared_identifier(self):
        with pytest.raises(RestrictionError, match="undeclared"):
            check_restrictions(parse("void k(int a, int *o) { *o = a + q; }"))


class TestAffineForm:
    def test_exhaustive_grid(self):
        # extracted form reproduces the subscript on a 0..4 x 0..4 grid
        cases = [
            ("i", {"i": 1}, 0),
            ("2 * i + 1", {"i": 2}, 1),
            ("i + j", {"i": 1, "j": 1}, 0),
            ("3 * i - 2 * j + 7", {"i": 3, "j": -2}, 7),
            ("(i << 2) + j", {"i": 4, "j": 1}, 0),
        ]
        for text, want_coeffs, want_const in cases:
            k = parse("void k(int i, int j, int *o) { *o = %s; }" % text)
            expr = k.body[0].value
            coeffs, const = affine_form(expr, ["i", "j"])
            assert coeffs == want_coeffs and const == want_const
            from minihls.oracle import interpret_oracle
            for i in range(5):
                for j in range(5):
                    direct = interpret_oracle(k, {}, {"i": i, "j": j})
                    predicted = (coeffs.get("i", 0) * i
                                 + coeffs.get("j", 0) * j + const)
                    assert direct["o"][0] == predicted & 0xFFFFFFFF

    @given(ci=st.integers(-5, 5), cj=st.integers(-5, 5),
           c0=st.integers(-10, 10))
    @settings(max_examples=40, deadline=None)
    def test_random_affine(self, ci, cj, c0):
        expr = Binary("+", Binary("+",
                                  Binary("*", IntLit(ci), VarRef("i")),
                                  Binary("*", IntLit(cj), VarRef("j"))),
                      IntLit(c0))
        coeffs, const = affine_form(expr, ["i", "j"])
        assert coeffs.get("i", 0) == ci
        assert coeffs.get("j", 0) == cj
        assert const == c0

    def test_non_affine_product(self):
        expr = Binary("*", VarRef("i"), VarRef("j"))
        assert affine_form(expr, ["i", "j"]) is None


class TestInline:
    def test_single_line_helper(self):
        src = """
        int sq(int x) { return x * x; }
        void k(int a, int *out) { *out = sq(a) + 1; }
        """
        k = inline_calls(check_restrictions(parse(src)))
        assert not [e for e in _exprs(k) if isinstance(e, Call)]
        value = k.body[0].value
        assert value == Binary("+", Binary("*", VarRef("a"), VarRef("a")),
                               IntLit(1))

    def test_nested_helpers(self):
        src = """
        int dbl(int x) { return x + x; }
        int quad(int x) { return dbl(dbl(x)) ; }
        void k(int a, int *out) { *out = quad(a); }
        """
        k = inline_calls(check_restrictions(parse(src)))
        assert not [e for e in _exprs(k) if isinstance(e, Call)]
        from minihls.oracle import interpret_oracle
        assert interpret_oracle(k, {}, {"a": 5})["out"][0] == 20

    def test_lut_preserved(self):
        src = ('void k(const uint10_t idx[4], short y[4]) {\n'
               '  int i;\n'
               '  for (i = 0; i < 4; i++) { y[i] = lut("costab", idx[i]); }\n'
               '}\n')
        k = inline_calls(check_restrictions(parse(src)))
        luts = [e for e in _exprs(k) if isinstance(e, LutExpr)]
        assert len(luts) == 1 and luts[0].table == "costab"

    def test_unknown_callee(self):
        src = "void k(int a, int *o) { *o = mystery(a); }"
        with pytest.raises(RestrictionError, match="unknown"):
            check_restrictions(parse(src))
