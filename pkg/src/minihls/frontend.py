"""Front end: lexing, parsing, dialect restriction checks, call inlining.

`parse` turns one kernel source file into a KernelAst (the kernel is the
last function in the file; earlier functions are inlinable helpers).
`check_restrictions` resolves array/pointer roles and rejects everything
the dialect forbids.  `inline_calls` substitutes helper bodies so the body
contains no calls except the `lut` and feedback intrinsics.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .ast_nodes import (
    ArrayDecl, ArrayRef, Assign, Binary, Call, ConstTable, Deref, Expr,
    ExprStmt, For, FuncDef, If, IntLit, KernelAst, LoadPrev, LutExpr, Param,
    Return, ScalarType, Select, Stmt, StoreNext, Unary, VarDecl, VarRef,
)
from .errors import (
    ConstantOverflow, RestrictionError, SourceSyntaxError, UnsupportedConstruct,
)

_PUNCT = [
    "<<=", ">>=", "==", "!=", "<=", ">=", "<<", ">>", "&&", "||", "++", "--",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "+", "-", "*", "/", "%", "&", "|", "^", "!", "~", "<", ">", "=",
    "(", ")", "[", "]", "{", "}", ",", ";", "?", ":",
]

_REJECTED_KEYWORDS = {
    "while": "while loop", "do": "do-while loop", "goto": "goto",
    "switch": "switch", "float": "floating point", "double": "floating point",
    "struct": "struct", "union": "union", "break": "break",
    "continue": "continue", "static": "static storage",
}


@dataclass
class Token:
    kind: str  # 'int' | 'ident' | 'string' | 'punct' | 'eof'
    value: object
    line: int
    col: int


class _Lexer:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0
        self.line = 1
        self.col = 1

    def error(self, msg):
        raise SourceSyntaxError(msg, self.line, self.col)

    def _advance(self, n=1):
        for _ in range(n):
            if self.pos < len(self.src) and self.src[self.pos] == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
            self.pos += 1

    def tokens(self) -> list[Token]:
        toks = []
        while True:
            t = self._next()
            toks.append(t)
            if t.kind == "eof":
                return toks

    def _next(self) -> Token:
        src = self.src
        while self.pos < len(src):
            c = src[self.pos]
            if c in " \t\r\n":
                self._advance()
            elif src.startswith("//", self.pos):
                while self.pos < len(src) and src[self.pos] != "\n":
                    self._advance()
            elif src.startswith("/*", self.pos):
                self._advance(2)
                while self.pos < len(src) and not src.startswith("*/", self.pos):
                    self._advance()
                if self.pos >= len(src):
                    self.error("unterminated comment")
                self._advance(2)
            else:
                break
        if self.pos >= len(src):
            return Token("eof", None, self.line, self.col)
        line, col = self.line, self.col
        c = src[self.pos]
        if c == "#":
            # handled by the preprocessor scan; a stray '#' here is an error
            self.error("unexpected '#'")
        if c.isdigit():
            j = self.pos
            if src.startswith("0x", j) or src.startswith("0X", j):
                j += 2
                while j < len(src) and src[j] in "0123456789abcdefABCDEF":
                    j += 1
                text = src[self.pos:j]
                value = int(text, 16)
            else:
                while j < len(src) and src[j].isdigit():
                    j += 1
                text = src[self.pos:j]
                value = int(text)
            if j < len(src) and (src[j].isalpha() or src[j] == "_" or src[j] == "."):
                if src[j] == "." or src[j] in "eE":
                    raise UnsupportedConstruct("floating point", line, col)
                self.error(f"bad integer literal near {src[self.pos:j + 1]!r}")
            self._advance(j - self.pos)
            return Token("int", value, line, col)
        if c.isalpha() or c == "_":
            j = self.pos
            while j < len(src) and (src[j].isalnum() or src[j] == "_"):
                j += 1
            name = src[self.pos:j]
            self._advance(j - self.pos)
            return Token("ident", name, line, col)
        if c == '"':
            j = self.pos + 1
            while j < len(src) and src[j] != '"':
                if src[j] == "\n":
                    self.error("unterminated string")
                j += 1
            if j >= len(src):
                self.error("unterminated string")
            text = src[self.pos + 1:j]
            self._advance(j + 1 - self.pos)
            return Token("string", text, line, col)
        for p in _PUNCT:
            if src.startswith(p, self.pos):
                self._advance(len(p))
                return Token("punct", p, line, col)
        self.error(f"unexpected character {c!r}")


def _strip_defines(source: str) -> tuple[str, list[tuple[str, str, int]]]:
    """Remove `#define NAME expr` lines, keeping line numbering intact."""
    out_lines = []
    defines = []
    for i, raw in enumerate(source.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("#"):
            parts = stripped[1:].strip().split(None, 2)
            if not parts or parts[0] != "define" or len(parts) < 3:
                raise UnsupportedConstruct(
                    f"preprocessor directive {stripped.split()[0]!r}"
                    " (only #define of integer constants)", i, 1)
            defines.append((parts[1], parts[2], i))
            out_lines.append("")
        else:
            out_lines.append(raw)
    return "\n".join(out_lines), defines


_STD_TYPES = {
    ("char",): ScalarType(True, 8),
    ("signed", "char"): ScalarType(True, 8),
    ("unsigned", "char"): ScalarType(False, 8),
    ("short",): ScalarType(True, 16),
    ("short", "int"): ScalarType(True, 16),
    ("unsigned", "short"): ScalarType(False, 16),
    ("unsigned", "short", "int"): ScalarType(False, 16),
    ("int",): ScalarType(True, 32),
    ("signed", "int"): ScalarType(True, 32),
    ("signed",): ScalarType(True, 32),
    ("unsigned",): ScalarType(False, 32),
    ("unsigned", "int"): ScalarType(False, 32),
    ("long",): ScalarType(True, 32),
    ("long", "int"): ScalarType(True, 32),
    ("unsigned", "long"): ScalarType(False, 32),
}

_TYPE_HEADS = {"void", "const", "char", "short", "int", "long", "signed", "unsigned"}


def _sized_type(name: str) -> ScalarType | None:
    for prefix, signed in (("uint", False), ("int", True)):
        if name.startswith(prefix) and name.endswith("_t"):
            digits = name[len(prefix):-2]
            if digits.isdigit():
                width = int(digits)
                if not (1 <= width <= 32):
                    raise UnsupportedConstruct(
                        f"integer type wider than 32 bits: {name}")
                return ScalarType(signed, width)
    return None


class _Parser:
    def __init__(self, tokens: list[Token], defines: dict[str, int]):
        self.toks = tokens
        self.i = 0
        self.defines = defines

    # -- token helpers --

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def error(self, msg, tok=None):
        tok = tok or self.cur
        raise SourceSyntaxError(msg, tok.line, tok.col)

    def at(self, kind, value=None) -> bool:
        t = self.cur
        return t.kind == kind and (value is None or t.value == value)

    def accept(self, kind, value=None) -> Token | None:
        if self.at(kind, value):
            t = self.cur
            self.i += 1
            return t
        return None

    def expect(self, kind, value=None) -> Token:
        t = self.accept(kind, value)
        if t is None:
            want = value if value is not None else kind
            got = self.cur.value if self.cur.kind != "eof" else "end of file"
            self.error(f"expected {want!r}, found {got!r}")
        return t

    def _check_rejected(self, name, tok):
        if name in _REJECTED_KEYWORDS:
            raise UnsupportedConstruct(_REJECTED_KEYWORDS[name], tok.line, tok.col)

    # -- types --

    def at_type(self) -> bool:
        t = self.cur
        if t.kind != "ident":
            return False
        if t.value in _TYPE_HEADS:
            return True
        return _sized_type(t.value) is not None

    def parse_type(self) -> tuple[ScalarType | None, bool]:
        """Returns (scalar type or None for void, is_const)."""
        is_const = bool(self.accept("ident", "const"))
        t = self.cur
        if t.kind != "ident":
            self.error("expected type name")
        sized = _sized_type(t.value)
        if sized is not None:
            self.i += 1
            return sized, is_const
        if t.value == "void":
            self.i += 1
            return None, is_const
        words = []
        while self.cur.kind == "ident" and self.cur.value in (
                "signed", "unsigned", "char", "short", "int", "long"):
            words.append(self.cur.value)
            self.i += 1
        key = tuple(words)
        if key not in _STD_TYPES:
            self.error(f"unknown type {' '.join(words) or t.value!r}", t)
        return _STD_TYPES[key], is_const

    # -- expressions (C precedence, subset) --

    def parse_expr(self) -> Expr:
        return self._bin_or()

    def _bin_or(self):
        e = self._bin_xor()
        while self.at("punct", "|"):
            self.i += 1
            e = Binary("|", e, self._bin_xor())
        return e

    def _bin_xor(self):
        e = self._bin_and()
        while self.at("punct", "^"):
            self.i += 1
            e = Binary("^", e, self._bin_and())
        return e

    def _bin_and(self):
        e = self._equality()
        while self.at("punct", "&"):
            self.i += 1
            e = Binary("&", e, self._equality())
        return e

    def _equality(self):
        e = self._relational()
        while self.cur.kind == "punct" and self.cur.value in ("==", "!="):
            op = self.cur.value
            self.i += 1
            e = Binary(op, e, self._relational())
        return e

    def _relational(self):
        e = self._shift()
        while self.cur.kind == "punct" and self.cur.value in ("<", "<=", ">", ">="):
            op = self.cur.value
            self.i += 1
            e = Binary(op, e, self._shift())
        return e

    def _shift(self):
        e = self._additive()
        while self.cur.kind == "punct" and self.cur.value in ("<<", ">>"):
            op = self.cur.value
            self.i += 1
            e = Binary(op, e, self._additive())
        return e

    def _additive(self):
        e = self._multiplicative()
        while self.cur.kind == "punct" and self.cur.value in ("+", "-"):
            op = self.cur.value
            self.i += 1
            e = Binary(op, e, self._multiplicative())
        return e

    def _multiplicative(self):
        e = self._unary()
        while self.cur.kind == "punct" and self.cur.value in ("*", "/", "%"):
            op = self.cur.value
            self.i += 1
            e = Binary(op, e, self._unary())
        return e

    def _unary(self):
        t = self.cur
        if t.kind == "punct" and t.value in ("-", "!"):
            self.i += 1
            operand = self._unary()
            if t.value == "-" and isinstance(operand, IntLit):
                return IntLit(-operand.value)
            return Unary(t.value, operand)
        if t.kind == "punct" and t.value == "~":
            raise UnsupportedConstruct(
                "bitwise complement '~' (xor against an all-ones constant instead)",
                t.line, t.col)
        if t.kind == "punct" and t.value == "+":
            self.i += 1
            return self._unary()
        return self._primary()

    def _primary(self) -> Expr:
        t = self.cur
        if t.kind == "int":
            self.i += 1
            return IntLit(t.value)
        if t.kind == "punct" and t.value == "(":
            self.i += 1
            e = self.parse_expr()
            self.expect("punct", ")")
            return e
        if t.kind == "ident":
            self._check_rejected(t.value, t)
            name = t.value
            self.i += 1
            if name == "lut" and self.at("punct", "("):
                self.i += 1
                table = self.expect("string").value
                self.expect("punct", ",")
                index = self.parse_expr()
                self.expect("punct", ")")
                return LutExpr(table, index)
            if name == "ROCCC_load_prev" and self.at("punct", "("):
                self.i += 1
                var = self.expect("ident").value
                self.expect("punct", ")")
                return LoadPrev(var)
            if self.at("punct", "("):
                self.i += 1
                args = []
                if not self.at("punct", ")"):
                    args.append(self.parse_expr())
                    while self.accept("punct", ","):
                        args.append(self.parse_expr())
                self.expect("punct", ")")
                return Call(name, tuple(args))
            if self.at("punct", "["):
                indices = []
                while self.accept("punct", "["):
                    indices.append(self.parse_expr())
                    self.expect("punct", "]")
                return ArrayRef(name, tuple(indices))
            if name in self.defines:
                return IntLit(self.defines[name])
            return VarRef(name)
        if t.kind == "punct" and t.value == "*":
            self.i += 1
            name = self.expect("ident").value
            return Deref(name)
        self.error(f"unexpected token {t.value!r}")

    # -- constant expressions (extents, #define bodies) --

    def parse_const_expr(self, what: str) -> int:
        tok = self.cur
        e = self.parse_expr()
        v = eval_const_expr(e, self.defines)
        if v is None:
            self.error(f"{what} must be a constant expression", tok)
        return v

    # -- statements --

    def parse_block(self) -> tuple[Stmt, ...]:
        """A `{ ... }` block or a single statement."""
        if self.accept("punct", "{"):
            stmts = []
            while not self.accept("punct", "}"):
                if self.at("eof"):
                    self.error("unterminated block")
                stmts.extend(self.parse_stmt())
            return tuple(stmts)
        return tuple(self.parse_stmt())

    def parse_stmt(self) -> list[Stmt]:
        t = self.cur
        if t.kind == "ident":
            self._check_rejected(t.value, t)
        if self.at("ident", "for"):
            return [self._parse_for()]
        if self.at("ident", "if"):
            return [self._parse_if()]
        if self.at("ident", "return"):
            self.i += 1
            value = None
            if not self.at("punct", ";"):
                value = self.parse_expr()
            self.expect("punct", ";")
            return [Return(value)]
        if self.at("ident", "ROCCC_store2next"):
            self.i += 1
            self.expect("punct", "(")
            var = self.expect("ident").value
            self.expect("punct", ",")
            value = self.parse_expr()
            self.expect("punct", ")")
            self.expect("punct", ";")
            return [StoreNext(var, value)]
        if self.at_type():
            return self._parse_decl()
        # assignment or expression statement
        lhs = self._primary()
        if isinstance(lhs, (VarRef, ArrayRef, Deref)):
            op_tok = self.cur
            if op_tok.kind == "punct" and op_tok.value == "=":
                self.i += 1
                value = self.parse_expr()
                self.expect("punct", ";")
                return [Assign(lhs, value)]
            if op_tok.kind == "punct" and op_tok.value in (
                    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>="):
                self.i += 1
                value = self.parse_expr()
                self.expect("punct", ";")
                read = VarRef(lhs.name) if isinstance(lhs, Deref) else lhs
                return [Assign(lhs, Binary(op_tok.value[:-1], read, value))]
            if op_tok.kind == "punct" and op_tok.value in ("++", "--"):
                self.i += 1
                self.expect("punct", ";")
                op = "+" if op_tok.value == "++" else "-"
                return [Assign(lhs, Binary(op, lhs, IntLit(1)))]
        if isinstance(lhs, Call):
            self.expect("punct", ";")
            return [ExprStmt(lhs)]
        self.error("expected assignment or call statement", t)

    def _parse_decl(self) -> list[Stmt]:
        ctype, is_const = self.parse_type()
        if ctype is None:
            self.error("void is not a value type here")
        stmts = []
        while True:
            name = self.expect("ident").value
            if self.at("punct", "["):
                extents = []
                while self.accept("punct", "["):
                    extents.append(self.parse_const_expr("array extent"))
                    self.expect("punct", "]")
                self.expect("punct", "=")
                values = self._parse_initializer(tuple(extents))
                if not is_const:
                    raise UnsupportedConstruct(
                        "non-const local array (only const coefficient tables)",
                        self.cur.line, self.cur.col)
                stmts.append(ConstTable(name, ctype, tuple(extents), values))
            else:
                init = None
                if self.accept("punct", "="):
                    init = self.parse_expr()
                stmts.append(VarDecl(name, ctype, init))
            if not self.accept("punct", ","):
                break
        self.expect("punct", ";")
        return stmts

    def _parse_initializer(self, extents: tuple[int, ...]) -> tuple[int, ...]:
        self.expect("punct", "{")
        values: list[int] = []
        if len(extents) == 2:
            rows = 0
            while True:
                sub = self._parse_initializer((extents[1],))
                values.extend(sub)
                rows += 1
                if not self.accept("punct", ","):
                    break
            if rows != extents[0]:
                self.error(f"initializer has {rows} rows, expected {extents[0]}")
        else:
            while not self.at("punct", "}"):
                values.append(self.parse_const_expr("initializer entry"))
                if not self.accept("punct", ","):
                    break
            if len(values) != extents[0]:
                self.error(
                    f"initializer has {len(values)} entries, expected {extents[0]}")
        self.expect("punct", "}")
        return tuple(values)

    def _parse_for(self) -> For:
        self.expect("ident", "for")
        self.expect("punct", "(")
        if self.at_type():
            ctype, _ = self.parse_type()
            if ctype is None:
                self.error("loop variable cannot be void")
        var = self.expect("ident").value
        self.expect("punct", "=")
        start = self.parse_expr()
        self.expect("punct", ";")
        cond_var = self.expect("ident").value
        if cond_var != var:
            self.error(f"loop condition must test {var!r}")
        cmp_tok = self.cur
        if not (self.accept("punct", "<") or self.accept("punct", "<=")):
            raise UnsupportedConstruct(
                f"loop comparison {cmp_tok.value!r} (only < and <=)",
                cmp_tok.line, cmp_tok.col)
        cmp = cmp_tok.value
        bound = self.parse_expr()
        self.expect("punct", ";")
        step = self._parse_for_update(var)
        self.expect("punct", ")")
        body = self.parse_block()
        return For(var, start, cmp, bound, step, body)

    def _parse_if(self) -> If:
        self.expect("ident", "if")
        self.expect("punct", "(")
        cond = self.parse_expr()
        self.expect("punct", ")")
        then_body = self.parse_block()
        else_body: tuple[Stmt, ...] = ()
        if self.accept("ident", "else"):
            if self.at("ident", "if"):
                else_body = (self._parse_if(),)
            else:
                else_body = self.parse_block()
        return If(cond, then_body, else_body)

    def _parse_for_update(self, var: str) -> Expr:
        if self.accept("punct", "++"):
            self.expect("ident", var)
            return IntLit(1)
        name = self.expect("ident").value
        if name != var:
            self.error(f"loop update must assign {var!r}")
        if self.accept("punct", "++"):
            return IntLit(1)
        if self.accept("punct", "+="):
            return self.parse_expr()
        self.expect("punct", "=")
        self.expect("ident", var)
        self.expect("punct", "+")
        return self.parse_expr()

    # -- functions --

    def parse_program(self) -> KernelAst:
        funcs = []
        while not self.at("eof"):
            funcs.append(self._parse_function())
        if not funcs:
            self.error("no function definition found")
        kernel_sig = funcs[-1]
        helpers = []
        for ret, name, params, arrays, body, tok in funcs[:-1]:
            helpers.append(self._to_helper(ret, name, params, arrays, body, tok))
        ret, name, params, arrays, body, tok = kernel_sig
        if ret is not None:
            self.error("kernel must return void", tok)
        kernel = KernelAst(name, tuple(params), tuple(arrays), body,
                           tuple(helpers))
        _detect_recursion(kernel)
        return kernel

    def _to_helper(self, ret, name, params, arrays, body, tok) -> FuncDef:
        if ret is None:
            raise UnsupportedConstruct(
                "helper functions must return a value", tok.line, tok.col)
        if arrays:
            raise UnsupportedConstruct(
                "helper functions take scalar arguments only", tok.line, tok.col)
        if any(p.direction == "out" for p in params):
            raise UnsupportedConstruct(
                "helper functions cannot take pointers", tok.line, tok.col)
        if len(body) != 1 or not isinstance(body[0], Return) or body[0].value is None:
            raise UnsupportedConstruct(
                "helper body must be a single `return expr;`", tok.line, tok.col)
        return FuncDef(name, tuple((p.name, p.ctype) for p in params),
                       body[0].value)

    def _parse_function(self):
        tok = self.cur
        ret, _ = self.parse_type()
        name = self.expect("ident").value
        self.expect("punct", "(")
        params: list[Param] = []
        arrays: list[ArrayDecl] = []
        if not self.at("punct", ")"):
            while True:
                self._parse_param(params, arrays)
                if not self.accept("punct", ","):
                    break
        self.expect("punct", ")")
        body = self.parse_block()
        return ret, name, params, arrays, body, tok

    def _parse_param(self, params, arrays):
        ctype, is_const = self.parse_type()
        if ctype is None:
            self.error("void parameter")
        is_ptr = bool(self.accept("punct", "*"))
        name = self.expect("ident").value
        if self.at("punct", "["):
            if is_ptr:
                self.error("array of pointers is not supported")
            extents = []
            while self.accept("punct", "["):
                extents.append(self.parse_const_expr("array extent"))
                self.expect("punct", "]")
            if len(extents) > 2:
                raise UnsupportedConstruct(
                    f"{len(extents)}-dimensional array (at most 2)",
                    self.cur.line, self.cur.col)
            # direction resolved by check_restrictions; const arrays are inputs
            arrays.append(ArrayDecl(name, ctype, tuple(extents),
                                    "in" if is_const else "out", is_const))
        else:
            params.append(Param(name, ctype, "out" if is_ptr else "in"))


def eval_const_expr(e: Expr, defines=None) -> int | None:
    """Fold an expression of literals; None when not constant."""
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, VarRef) and defines and e.name in defines:
        return defines[e.name]
    if isinstance(e, Unary):
        v = eval_const_expr(e.operand, defines)
        if v is None:
            return None
        return -v if e.op == "-" else int(v == 0)
    if isinstance(e, Binary):
        a = eval_const_expr(e.left, defines)
        b = eval_const_expr(e.right, defines)
        if a is None or b is None:
            return None
        return apply_binop(e.op, a, b)
    return None


def apply_binop(op: str, a: int, b: int) -> int:
    """Exact integer semantics of the dialect's binary operators.

    Division and right shift round toward negative infinity (documented
    deviation from ISO C for negative operands; divisors are restricted to
    powers of two so this equals an arithmetic shift).
    """
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if b == 0:
            raise RestrictionError("division by zero")
        return a // b if b > 0 else -((-a) // (-b))
    if op == "%":
        if b == 0:
            raise RestrictionError("modulo by zero")
        return a - b * (a // b)
    if op == "<<":
        if b < 0 or b > 63:
            raise RestrictionError(f"shift amount {b} out of range")
        return a << b
    if op == ">>":
        if b < 0 or b > 63:
            raise RestrictionError(f"shift amount {b} out of range")
        return a >> b
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op == "==":
        return int(a == b)
    if op == "!=":
        return int(a != b)
    if op == "<":
        return int(a < b)
    if op == "<=":
        return int(a <= b)
    if op == ">":
        return int(a > b)
    if op == ">=":
        return int(a >= b)
    raise ValueError(f"unknown operator {op!r}")


def parse(source: str, filename: str = "<input>") -> KernelAst:
    """Parse one kernel source file into a KernelAst."""
    text, define_lines = _strip_defines(source)
    defines: dict[str, int] = {}
    for name, body, lineno in define_lines:
        body_tokens = _Lexer(body).tokens()
        sub = _Parser(body_tokens, defines)
        e = sub.parse_expr()
        v = eval_const_expr(e, defines)
        if v is None:
            raise SourceSyntaxError(
                f"#define {name} is not an integer constant", lineno, 1)
        _check_literal_32(v, lineno, 1)
        defines[name] = v
    tokens = _Lexer(text).tokens()
    parser = _Parser(tokens, defines)
    return parser.parse_program()


def _check_literal_32(v: int, line=0, col=0):
    if v >= (1 << 32) or v < -(1 << 31):
        raise ConstantOverflow(f"constant {v} does not fit in 32 bits", line, col)


def _detect_recursion(kernel: KernelAst):
    """Reject direct or mutual recursion among helpers (and the kernel)."""
    graph: dict[str, set[str]] = {}

    def calls_in(e: Expr, acc: set):
        if isinstance(e, Call):
            acc.add(e.name)
            for a in e.args:
                calls_in(a, acc)
        elif isinstance(e, Binary):
            calls_in(e.left, acc)
            calls_in(e.right, acc)
        elif isinstance(e, Unary):
            calls_in(e.operand, acc)
        elif isinstance(e, Select):
            for sub in (e.cond, e.if_true, e.if_false):
                calls_in(sub, acc)
        elif isinstance(e, LutExpr):
            calls_in(e.index, acc)
        elif isinstance(e, ArrayRef):
            for i in e.indices:
                calls_in(i, acc)

    for h in kernel.helpers:
        acc: set[str] = set()
        calls_in(h.body, acc)
        graph[h.name] = acc
    kernel_calls: set[str] = set()
    for s in walk_stmts(kernel.body):
        for e in stmt_exprs(s):
            calls_in(e, kernel_calls)
    graph[kernel.name] = kernel_calls

    visiting: set[str] = set()
    done: set[str] = set()

    def visit(n: str):
        if n in done or n not in graph:
            return
        if n in visiting:
            raise UnsupportedConstruct("recursion")
        visiting.add(n)
        for m in graph[n]:
            visit(m)
        visiting.discard(n)
        done.add(n)

    for n in graph:
        visit(n)


def walk_stmts(stmts) -> list[Stmt]:
    """All statements in the tree, pre-order."""
    out = []
    for s in stmts:
        out.append(s)
        if isinstance(s, For):
            out.extend(walk_stmts(s.body))
        elif isinstance(s, If):
            out.extend(walk_stmts(s.then_body))
            out.extend(walk_stmts(s.else_body))
    return out


def stmt_exprs(s: Stmt) -> list[Expr]:
    """Direct expressions of a statement (targets included)."""
    if isinstance(s, VarDecl):
        return [s.init] if s.init is not None else []
    if isinstance(s, Assign):
        return [s.target, s.value]
    if isinstance(s, StoreNext):
        return [s.value]
    if isinstance(s, For):
        return [s.start, s.bound, s.step]
    if isinstance(s, If):
        return [s.cond]
    if isinstance(s, Return):
        return [s.value] if s.value is not None else []
    if isinstance(s, ExprStmt):
        return [s.expr]
    return []


def walk_exprs(e: Expr) -> list[Expr]:
    out = [e]
    if isinstance(e, Binary):
        out += walk_exprs(e.left) + walk_exprs(e.right)
    elif isinstance(e, Unary):
        out += walk_exprs(e.operand)
    elif isinstance(e, Select):
        out += walk_exprs(e.cond) + walk_exprs(e.if_true) + walk_exprs(e.if_false)
    elif isinstance(e, ArrayRef):
        for i in e.indices:
            out += walk_exprs(i)
    elif isinstance(e, Call):
        for a in e.args:
            out += walk_exprs(a)
    elif isinstance(e, LutExpr):
        out += walk_exprs(e.index)
    return out


# --- affine subscript analysis ----------------------------------------------


def affine_form(e: Expr, loop_vars) -> tuple[dict[str, int], int] | None:
    """Decompose `e` as sum(coeff[v] * v) + const over `loop_vars`.

    Returns None when the expression is not affine with constant
    coefficients.  Verified property: evaluating the returned form equals
    evaluating the expression for every assignment of the loop variables.
    """
    if isinstance(e, IntLit):
        return {}, e.value
    if isinstance(e, VarRef):
        if e.name in loop_vars:
            return {e.name: 1}, 0
        return None
    if isinstance(e, Unary) and e.op == "-":
        sub = affine_form(e.operand, loop_vars)
        if sub is None:
            return None
        coeffs, const = sub
        return {v: -c for v, c in coeffs.items()}, -const
    if isinstance(e, Binary):
        if e.op in ("+", "-"):
            left = affine_form(e.left, loop_vars)
            right = affine_form(e.right, loop_vars)
            if left is None or right is None:
                return None
            sign = 1 if e.op == "+" else -1
            coeffs = dict(left[0])
            for v, c in right[0].items():
                coeffs[v] = coeffs.get(v, 0) + sign * c
            return ({v: c for v, c in coeffs.items() if c != 0},
                    left[1] + sign * right[1])
        if e.op == "*":
            left = affine_form(e.left, loop_vars)
            right = affine_form(e.right, loop_vars)
            if left is None or right is None:
                return None
            for const_side, var_side in ((left, right), (right, left)):
                if not const_side[0]:
                    k = const_side[1]
                    return ({v: c * k for v, c in var_side[0].items() if c * k != 0},
                            var_side[1] * k)
            return None
        if e.op == "<<":
            left = affine_form(e.left, loop_vars)
            right = affine_form(e.right, loop_vars)
            if left is None or right is None or right[0]:
                return None
            k = 1 << right[1]
            return {v: c * k for v, c in left[0].items()}, left[1] * k
    return None


# --- restriction checking ----------------------------------------------------


def check_restrictions(kernel: KernelAst) -> KernelAst:
    """Validate the dialect restrictions and resolve array directions.

    Returns a new KernelAst whose ArrayDecl directions reflect actual use
    (read-only -> in, written -> out).  Raises RestrictionError listing the
    first violation found.
    """
    problems: list[str] = []
    params = {p.name: p for p in kernel.params}
    arrays = {a.name: a for a in kernel.arrays}
    helper_names = {h.name for h in kernel.helpers}
    tables = {s.name for s in kernel.body if isinstance(s, ConstTable)}

    reads: dict[str, bool] = {a: False for a in arrays}
    writes: dict[str, bool] = {a: False for a in arrays}

    def check_expr(e: Expr, loop_vars: list[str], locals_: set):
        for sub in walk_exprs(e):
            if isinstance(sub, VarRef):
                name = sub.name
                if name in params:
                    if params[name].direction == "out":
                        problems.append(
                            f"pointer parameter '{name}' used as a value"
                            " (pointers are single-value outputs only)")
                elif name in arrays:
                    problems.append(f"array '{name}' used without subscript")
                elif name not in locals_ and name not in loop_vars:
                    problems.append(f"undeclared identifier '{name}'")
            elif isinstance(sub, Deref):
                problems.append(
                    f"pointer dereference of '{sub.name}' in an expression")
            elif isinstance(sub, ArrayRef):
                if sub.name in tables:
                    continue
                if sub.name not in arrays:
                    problems.append(f"undeclared array '{sub.name}'")
                    continue
                reads[sub.name] = True
                a = arrays[sub.name]
                if len(sub.indices) != len(a.extents):
                    problems.append(
                        f"array '{sub.name}' subscripted with"
                        f" {len(sub.indices)} indices, declared"
                        f" {len(a.extents)}-dimensional")
                for idx in sub.indices:
                    if affine_form(idx, loop_vars) is None:
                        problems.append(
                            f"non-affine subscript on '{sub.name}'")
            elif isinstance(sub, Call):
                if sub.name not in helper_names:
                    problems.append(f"call to unknown function '{sub.name}'")
            elif isinstance(sub, Binary) and sub.op in ("/", "%", "<<", ">>"):
                rv = eval_const_expr(sub.right)
                if sub.op in ("/", "%"):
                    if rv is None:
                        problems.append(
                            f"'{sub.op}' by a non-constant divisor")
                    elif rv <= 0 or (rv & (rv - 1)) != 0:
                        problems.append(
                            f"'{sub.op}' by {rv} (only positive powers of two)")
                else:
                    if rv is None:
                        problems.append("shift by a non-constant amount")
                    elif not (0 <= rv <= 63):
                        problems.append(f"shift amount {rv} out of range")

    def check_target(t, loop_vars, locals_, in_if: bool):
        if isinstance(t, VarRef):
            name = t.name
            if name in params:
                problems.append(
                    f"assignment to value parameter '{name}'")
            elif name in loop_vars:
                problems.append(f"assignment to loop index '{name}'")
            elif name not in locals_:
                problems.append(f"assignment to undeclared '{name}'")
        elif isinstance(t, Deref):
            if t.name not in params or params[t.name].direction != "out":
                problems.append(
                    f"'*{t.name}' target is not a pointer parameter")
        elif isinstance(t, ArrayRef):
            if t.name in tables:
                problems.append(f"assignment to const table '{t.name}'")
                return
            if t.name not in arrays:
                problems.append(f"assignment to undeclared array '{t.name}'")
                return
            writes[t.name] = True
            if arrays[t.name].const:
                problems.append(f"assignment to const array '{t.name}'")
            if in_if:
                problems.append(
                    f"conditional store to array '{t.name}'"
                    " (array stores must be unconditional)")
            a = arrays[t.name]
            if len(t.indices) != len(a.extents):
                problems.append(
                    f"array '{t.name}' subscripted with {len(t.indices)}"
                    f" indices, declared {len(a.extents)}-dimensional")
            for idx in t.indices:
                if affine_form(idx, loop_vars) is None:
                    problems.append(f"non-affine subscript on '{t.name}'")

    def check_stmts(stmts, loop_vars: list[str], locals_: set, in_if: bool):
        for s in stmts:
            if isinstance(s, VarDecl):
                if s.name in locals_ or s.name in params or s.name in arrays:
                    problems.append(f"redeclaration of '{s.name}'")
                if s.init is not None:
                    check_expr(s.init, loop_vars, locals_)
                locals_.add(s.name)
            elif isinstance(s, ConstTable):
                for v in s.values:
                    if not (s.elem.min <= v <= s.elem.max):
                        problems.append(
                            f"table '{s.name}' entry {v} outside"
                            f" {s.elem.name()}")
            elif isinstance(s, Assign):
                check_target(s.target, loop_vars, locals_, in_if)
                check_expr(s.value, loop_vars, locals_)
            elif isinstance(s, StoreNext):
                if s.var not in locals_:
                    problems.append(
                        f"ROCCC_store2next target '{s.var}' is not a local")
                check_expr(s.value, loop_vars, locals_)
            elif isinstance(s, For):
                for name, expr in (("start", s.start), ("bound", s.bound),
                                   ("step", s.step)):
                    if eval_const_expr(expr) is None:
                        problems.append(
                            f"loop {name} of '{s.var}' is not constant")
                step = eval_const_expr(s.step)
                if step is not None and step < 1:
                    problems.append(
                        f"loop step of '{s.var}' must be positive")
                if in_if:
                    problems.append("loop nested inside if")
                check_stmts(s.body, loop_vars + [s.var], locals_, in_if)
            elif isinstance(s, If):
                check_expr(s.cond, loop_vars, locals_)
                check_stmts(s.then_body, loop_vars, locals_, True)
                check_stmts(s.else_body, loop_vars, locals_, True)
            elif isinstance(s, Return):
                if s.value is not None:
                    problems.append("kernel return with a value")
            elif isinstance(s, ExprStmt):
                check_expr(s.expr, loop_vars, locals_)

    check_stmts(kernel.body, [], set(), False)

    new_arrays = []
    for a in kernel.arrays:
        if reads[a.name] and writes[a.name]:
            problems.append(
                f"array '{a.name}' is both read and written"
                " (in/out arrays are not supported)")
        direction = "out" if writes[a.name] else "in"
        new_arrays.append(dataclasses.replace(a, direction=direction))

    if problems:
        raise RestrictionError("; ".join(dict.fromkeys(problems)))
    return dataclasses.replace(kernel, arrays=tuple(new_arrays))


def inline_calls(kernel: KernelAst) -> KernelAst:
    """Substitute helper bodies at call sites; `lut` and the feedback
    intrinsics are preserved untouched."""
    helpers = {h.name: h for h in kernel.helpers}

    def expand(e: Expr, depth=0) -> Expr:
        if depth > 64:
            raise RestrictionError("helper call nesting too deep")
        if isinstance(e, Call):
            h = helpers.get(e.name)
            if h is None:
                raise RestrictionError(f"call to unknown function '{e.name}'")
            if len(e.args) != len(h.params):
                raise RestrictionError(
                    f"call to '{e.name}' with {len(e.args)} arguments,"
                    f" expected {len(h.params)}")
            args = [expand(a, depth) for a in e.args]
            env = {name: arg for (name, _), arg in zip(h.params, args)}
            return expand(_substitute(h.body, env), depth + 1)
        if isinstance(e, Binary):
            return Binary(e.op, expand(e.left, depth), expand(e.right, depth))
        if isinstance(e, Unary):
            return Unary(e.op, expand(e.operand, depth))
        if isinstance(e, Select):
            return Select(expand(e.cond, depth), expand(e.if_true, depth),
                          expand(e.if_false, depth))
        if isinstance(e, ArrayRef):
            return ArrayRef(e.name, tuple(expand(i, depth) for i in e.indices))
        if isinstance(e, LutExpr):
            return LutExpr(e.table, expand(e.index, depth))
        return e

    def rewrite(stmts) -> tuple[Stmt, ...]:
        out = []
        for s in stmts:
            if isinstance(s, VarDecl):
                out.append(VarDecl(s.name, s.ctype,
                                   expand(s.init) if s.init else None))
            elif isinstance(s, Assign):
                out.append(Assign(s.target, expand(s.value)))
            elif isinstance(s, StoreNext):
                out.append(StoreNext(s.var, expand(s.value)))
            elif isinstance(s, For):
                out.append(For(s.var, expand(s.start), s.cmp, expand(s.bound),
                               expand(s.step), rewrite(s.body)))
            elif isinstance(s, If):
                out.append(If(expand(s.cond), rewrite(s.then_body),
                              rewrite(s.else_body)))
            elif isinstance(s, ExprStmt):
                raise RestrictionError(
                    "call statement with unused result")
            else:
                out.append(s)
        return tuple(out)

    return dataclasses.replace(kernel, body=rewrite(kernel.body), helpers=())


def _substitute(e: Expr, env: dict[str, Expr]) -> Expr:
    if isinstance(e, VarRef) and e.name in env:
        return env[e.name]
    if isinstance(e, Binary):
        return Binary(e.op, _substitute(e.left, env), _substitute(e.right, env))
    if isinstance(e, Unary):
        return Unary(e.op, _substitute(e.operand, env))
    if isinstance(e, Select):
        return Select(_substitute(e.cond, env), _substitute(e.if_true, env),
                      _substitute(e.if_false, env))
    if isinstance(e, Call):
        return Call(e.name, tuple(_substitute(a, env) for a in e.args))
    if isinstance(e, LutExpr):
        return LutExpr(e.table, _substitute(e.index, env))
    if isinstance(e, ArrayRef):
        return ArrayRef(e.name, tuple(_substitute(i, env) for i in e.indices))
    return e
