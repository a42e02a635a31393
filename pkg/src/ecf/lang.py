"""Abstract syntax, concrete syntax and static validation for the contract language.

A contract has integer fields (optionally map-valued), integer locals and a
single method body.  Sources may declare several named methods; they are
desugared into one body that dispatches on the reserved ``sel`` local.

Concrete syntax::

    contract DAO {
      field credit map;
      field balance;
      method deposit(o, amount) {
        var c, b;
        c := credit[o]; c := c + amount; credit[o] := c;
        b := balance; b := b + amount; balance := b
      }
    }
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Optional, Union

IMPLICIT_LOCALS = ("arg", "ret", "res")
SELECTOR = "sel"
KEYWORDS = {
    "contract", "field", "map", "enter", "method", "var", "call", "assert",
    "skip", "return", "if", "else", "while", "and", "or", "not", "self",
    "true", "false",
}
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.message = message
        self.line = line
        self.col = col


# --------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class ObjRef:
    """``@Name``: the interned integer identifier of a contract."""
    name: str


@dataclass(frozen=True)
class SelfRef:
    pass


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class UnOp:
    op: str  # "-" or "not"
    operand: "Expr"


Expr = Union[Const, Var, ObjRef, SelfRef, BinOp, UnOp]

ARITH_OPS = ("+", "-", "*")
COMPARE_OPS = ("=", "!=", "<", "<=", ">", ">=")
BOOL_OPS = ("and", "or")


def expr_vars(e: Expr) -> Iterator[str]:
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, BinOp):
        yield from expr_vars(e.left)
        yield from expr_vars(e.right)
    elif isinstance(e, UnOp):
        yield from expr_vars(e.operand)


def expr_objrefs(e: Expr) -> Iterator[str]:
    if isinstance(e, ObjRef):
        yield e.name
    elif isinstance(e, BinOp):
        yield from expr_objrefs(e.left)
        yield from expr_objrefs(e.right)
    elif isinstance(e, UnOp):
        yield from expr_objrefs(e.operand)


# --------------------------------------------------------------------------
# Primitive commands


@dataclass(frozen=True)
class AssignLocal:
    target: str
    expr: Expr


@dataclass(frozen=True)
class WriteField:
    field: str
    key: Optional[Expr]
    source: str


@dataclass(frozen=True)
class ReadField:
    target: str
    field: str
    key: Optional[Expr]


@dataclass(frozen=True)
class Assert:
    cond: Expr


@dataclass(frozen=True)
class Call:
    """``target := call callee.method(args)``.

    ``callee`` names a contract, or a local holding an interned object id when
    ``dynamic`` is set.
    """
    target: str
    callee: str
    dynamic: bool
    method: Optional[str]
    args: tuple


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Enter:
    pass


@dataclass(frozen=True)
class Return:
    pass


Primitive = Union[AssignLocal, WriteField, ReadField, Assert, Call, Skip, Enter, Return]
PRIMITIVES = (AssignLocal, WriteField, ReadField, Assert, Call, Skip, Enter, Return)


# --------------------------------------------------------------------------
# Compound commands


@dataclass(frozen=True)
class Block:
    body: tuple


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Block
    orelse: Block


@dataclass(frozen=True)
class While:
    cond: Expr
    body: Block


Command = Union[Primitive, Block, If, While]


def iter_primitives(cmd: Command) -> Iterator[Primitive]:
    if isinstance(cmd, Block):
        for c in cmd.body:
            yield from iter_primitives(c)
    elif isinstance(cmd, If):
        yield from iter_primitives(cmd.then)
        yield from iter_primitives(cmd.orelse)
    elif isinstance(cmd, While):
        yield from iter_primitives(cmd.body)
    else:
        yield cmd


def iter_exprs(cmd: Command) -> Iterator[Expr]:
    if isinstance(cmd, Block):
        for c in cmd.body:
            yield from iter_exprs(c)
    elif isinstance(cmd, If):
        yield cmd.cond
        yield from iter_exprs(cmd.then)
        yield from iter_exprs(cmd.orelse)
    elif isinstance(cmd, While):
        yield cmd.cond
        yield from iter_exprs(cmd.body)
    elif isinstance(cmd, AssignLocal):
        yield cmd.expr
    elif isinstance(cmd, (WriteField, ReadField)):
        if cmd.key is not None:
            yield cmd.key
    elif isinstance(cmd, Assert):
        yield cmd.cond
    elif isinstance(cmd, Call):
        yield from cmd.args


# --------------------------------------------------------------------------
# Contracts


@dataclass(frozen=True)
class FieldDecl:
    name: str
    is_map: bool = False


@dataclass(frozen=True)
class Method:
    name: Optional[str]  # None for the anonymous ``enter`` method
    params: tuple
    locals: tuple
    body: Block


@dataclass(frozen=True)
class Contract:
    name: str
    fields: tuple
    methods: tuple

    @cached_property
    def field_map(self) -> dict:
        return {f.name: f for f in self.fields}

    @cached_property
    def locals(self) -> frozenset:
        names = set(IMPLICIT_LOCALS)
        if self.is_dispatching:
            names.add(SELECTOR)
        for m in self.methods:
            names.update(m.params)
            names.update(m.locals)
        return frozenset(names)

    @property
    def is_dispatching(self) -> bool:
        return not (len(self.methods) == 1 and self.methods[0].name is None)

    def selector(self, method: Optional[str]) -> int:
        if not self.is_dispatching:
            if method is not None:
                raise KeyError(f"contract {self.name} has no named methods")
            return 0
        for i, m in enumerate(self.methods):
            if m.name == method:
                return i + 1
        raise KeyError(f"contract {self.name} has no method {method!r}")

    def method_named(self, method: Optional[str]) -> Method:
        if not self.is_dispatching:
            return self.methods[0]
        return self.methods[self.selector(method) - 1]

    @cached_property
    def body(self) -> Command:
        """The single desugared method body."""
        if not self.is_dispatching:
            return self.methods[0].body
        chain: Block = Block((Return(),))
        for i in reversed(range(len(self.methods))):
            m = self.methods[i]
            cond = BinOp("=", Var(SELECTOR), Const(i + 1))
            chain = Block((If(cond, m.body, chain),))
        return chain


class CodeContext:
    """Maps contract names to contracts and interns names to integers.

    Interning is by sorted name starting at 1, so it does not depend on the
    order contracts were declared in.
    """

    def __init__(self, contracts: Iterable[Contract] = ()):
        self.contracts: dict = {}
        self.duplicates: list = []
        for c in contracts:
            if c.name in self.contracts:
                self.duplicates.append(c.name)
            self.contracts[c.name] = c
        self.object_ids = {n: i + 1 for i, n in enumerate(sorted(self.contracts))}
        self.object_names = {i: n for n, i in self.object_ids.items()}

    def __getitem__(self, name: str) -> Contract:
        return self.contracts[name]

    def __contains__(self, name: str) -> bool:
        return name in self.contracts

    def __iter__(self):
        return iter(self.contracts.values())

    def __len__(self) -> int:
        return len(self.contracts)

    def names(self) -> list:
        return list(self.contracts)

    def object_id(self, name: str) -> int:
        return self.object_ids[name]

    def object_name(self, oid: int) -> Optional[str]:
        return self.object_names.get(oid)

    def with_contracts(self, extra: Iterable[Contract]) -> "CodeContext":
        merged = dict(self.contracts)
        for c in extra:
            merged[c.name] = c
        return CodeContext(merged.values())


# --------------------------------------------------------------------------
# Lexer

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|\#[^\n]*)
  | (?P<num>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|!=|<=|>=|==|[-+*=<>(){}\[\];,.@!])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(source: str) -> list:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if not m:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident" and text in KEYWORDS:
            tokens.append(Token("kw", text, line, col))
        elif kind in ("num", "ident", "op"):
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.i = 0
        self.fields: dict = {}
        self.declared: set = set()

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.kind in ("kw", "op") and self.tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            self.error(f"expected identifier, found {self.tok.text or 'end of input'!r}")
        t = self.tok
        self.i += 1
        return t

    # grammar
    def contract(self) -> Contract:
        self.fields = {}
        self.expect("contract")
        name = self.ident().text
        self.expect("{")
        fields = []
        while self.at("field"):
            self.i += 1
            ft = self.ident()
            if ft.text in self.fields:
                self.error(f"duplicate field {ft.text!r}", ft)
            is_map = self.accept("map")
            self.accept(";")
            decl = FieldDecl(ft.text, is_map)
            self.fields[ft.text] = decl
            fields.append(decl)
        methods = []
        if self.at("enter"):
            self.i += 1
            methods.append(self.method_body(None, ()))
        else:
            seen = set()
            while self.at("method"):
                self.i += 1
                mt = self.ident()
                if mt.text in seen:
                    self.error(f"duplicate method {mt.text!r}", mt)
                seen.add(mt.text)
                self.expect("(")
                params = []
                if not self.at(")"):
                    params.append(self.ident().text)
                    while self.accept(","):
                        params.append(self.ident().text)
                self.expect(")")
                methods.append(self.method_body(mt.text, tuple(params)))
            if not methods:
                self.error("expected 'enter' or 'method'")
        self.expect("}")
        return Contract(name, tuple(fields), tuple(methods))

    def method_body(self, name: Optional[str], params: tuple) -> Method:
        self.declared = set(IMPLICIT_LOCALS) | set(params)
        if name is not None:
            self.declared.add(SELECTOR)
        for p in params:
            if p in self.fields:
                self.error(f"parameter {p!r} shadows a field")
        self.expect("{")
        local_names = []
        while self.at("var"):
            self.i += 1
            while True:
                t = self.ident()
                if t.text in self.fields:
                    self.error(f"local {t.text!r} shadows a field", t)
                if t.text not in self.declared:
                    local_names.append(t.text)
                self.declared.add(t.text)
                if not self.accept(","):
                    break
            self.accept(";")
        stmts = self.stmts()
        self.expect("}")
        if not stmts or not isinstance(stmts[-1], Return):
            stmts.append(Return())
        return Method(name, params, tuple(local_names), Block(tuple(stmts)))

    def stmts(self) -> list:
        out = []
        while not self.at("}") and self.tok.kind != "eof":
            out.append(self.stmt())
            while self.accept(";"):
                pass
        return out

    def block(self) -> Block:
        self.expect("{")
        body = self.stmts()
        self.expect("}")
        return Block(tuple(body))

    def need_local(self, tok: Token):
        if tok.text not in self.declared:
            self.error(f"undeclared local {tok.text!r}", tok)

    def stmt(self) -> Command:
        t = self.tok
        if self.accept("skip"):
            return Skip()
        if self.accept("return"):
            return Return()
        if self.accept("assert"):
            return Assert(self.expr())
        if self.accept("if"):
            return self.if_rest()
        if self.accept("while"):
            cond = self.expr()
            return While(cond, self.block())
        if self.at("call"):
            return self.call("res")
        if t.kind != "ident":
            self.error(f"unexpected {t.text or 'end of input'!r}")
        self.i += 1
        if t.text in self.fields:
            decl = self.fields[t.text]
            key = self.key_suffix(decl, t)
            self.expect(":=")
            src = self.ident()
            if src.text in self.fields:
                self.error("field-to-field assignment; read into a local first", src)
            self.need_local(src)
            if self.at("[") or self.at("+") or self.at("-") or self.at("*"):
                self.error("a field can only be assigned from a local variable")
            return WriteField(t.text, key, src.text)
        self.need_local(t)
        if self.at("["):
            self.error(f"{t.text!r} is not a map field")
        self.expect(":=")
        if self.at("call"):
            return self.call(t.text)
        if self.tok.kind == "ident" and self.tok.text in self.fields:
            ft = self.ident()
            key = self.key_suffix(self.fields[ft.text], ft)
            return ReadField(t.text, ft.text, key)
        return AssignLocal(t.text, self.expr())

    def key_suffix(self, decl: FieldDecl, tok: Token) -> Optional[Expr]:
        if self.accept("["):
            if not decl.is_map:
                self.error(f"field {decl.name!r} is not a map", tok)
            key = self.expr()
            self.expect("]")
            return key
        if decl.is_map:
            self.error(f"map field {decl.name!r} needs a key", tok)
        return None

    def call(self, target: str) -> Call:
        self.expect("call")
        ct = self.ident()
        dynamic = ct.text in self.declared
        method = None
        if self.accept("."):
            method = self.ident().text
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.accept(","):
                args.append(self.expr())
        self.expect(")")
        return Call(target, ct.text, dynamic, method, tuple(args))

    def if_rest(self) -> If:
        cond = self.expr()
        then = self.block()
        orelse = Block(())
        if self.accept("else"):
            if self.accept("if"):
                orelse = Block((self.if_rest(),))
            else:
                orelse = self.block()
        return If(cond, then, orelse)

    # expressions, lowest precedence first
    def expr(self) -> Expr:
        left = self.conj()
        while self.accept("or"):
            left = BinOp("or", left, self.conj())
        return left

    def conj(self) -> Expr:
        left = self.neg()
        while self.accept("and"):
            left = BinOp("and", left, self.neg())
        return left

    def neg(self) -> Expr:
        if self.accept("not") or self.accept("!"):
            return UnOp("not", self.neg())
        return self.comparison()

    def comparison(self) -> Expr:
        left = self.additive()
        for op in ("==", "=", "!=", "<=", ">=", "<", ">"):
            if self.accept(op):
                return BinOp("=" if op == "==" else op, left, self.additive())
        return left

    def additive(self) -> Expr:
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.accept("*"):
            left = BinOp("*", left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.accept("-"):
            operand = self.unary()
            if isinstance(operand, Const):
                return Const(-operand.value)
            return UnOp("-", operand)
        return self.atom()

    def atom(self) -> Expr:
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return Const(int(t.text))
        if self.accept("true"):
            return Const(1)
        if self.accept("false"):
            return Const(0)
        if self.accept("self"):
            return SelfRef()
        if self.accept("@"):
            return ObjRef(self.ident().text)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            self.i += 1
            if t.text in self.fields:
                self.error(f"field {t.text!r} used in an expression; read it into a local first", t)
            self.need_local(t)
            return Var(t.text)
        self.error(f"unexpected {t.text or 'end of input'!r} in expression")


def parse_contract(source: str) -> Contract:
    p = _Parser(source)
    k = p.contract()
    if p.tok.kind != "eof":
        p.error("trailing input after contract")
    return k


def parse_contracts(source: str) -> list:
    """Parse a file holding zero or more ``contract`` declarations."""
    p = _Parser(source)
    out = []
    while p.tok.kind != "eof":
        out.append(p.contract())
    return out


# --------------------------------------------------------------------------
# Printer

_PREC = {"or": 1, "and": 2, "not": 3, "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
         "+": 5, "-": 5, "*": 6}


def format_expr(e: Expr, parent: int = 0) -> str:
    if isinstance(e, Const):
        return str(e.value) if e.value >= 0 or parent < 7 else f"({e.value})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, ObjRef):
        return f"@{e.name}"
    if isinstance(e, SelfRef):
        return "self"
    if isinstance(e, UnOp):
        if e.op == "not":
            s = f"not {format_expr(e.operand, 3)}"
            return f"({s})" if parent > 3 else s
        return f"-{format_expr(e.operand, 7)}"
    p = _PREC[e.op]
    # left-assoc: right operand needs parens at equal precedence; comparisons are non-assoc
    lp = p + 1 if p == 4 else p
    s = f"{format_expr(e.left, lp)} {e.op} {format_expr(e.right, p + 1)}"
    return f"({s})" if p < parent else s


def format_primitive(c: Primitive) -> str:
    if isinstance(c, AssignLocal):
        return f"{c.target} := {format_expr(c.expr)}"
    if isinstance(c, WriteField):
        key = f"[{format_expr(c.key)}]" if c.key is not None else ""
        return f"{c.field}{key} := {c.source}"
    if isinstance(c, ReadField):
        key = f"[{format_expr(c.key)}]" if c.key is not None else ""
        return f"{c.target} := {c.field}{key}"
    if isinstance(c, Assert):
        return f"assert {format_expr(c.cond)}"
    if isinstance(c, Call):
        m = f".{c.method}" if c.method else ""
        args = ", ".join(format_expr(a) for a in c.args)
        return f"{c.target} := call {c.callee}{m}({args})"
    if isinstance(c, Skip):
        return "skip"
    if isinstance(c, Enter):
        return "enter"
    if isinstance(c, Return):
        return "return"
    raise TypeError(c)


def _format_block(b: Block, indent: int) -> list:
    pad = "  " * indent
    lines = []
    for c in b.body:
        if isinstance(c, If):
            lines.extend(_format_if(c, indent))
        elif isinstance(c, While):
            lines.append(f"{pad}while {format_expr(c.cond)} {{")
            lines.extend(_format_block(c.body, indent + 1))
            lines.append(f"{pad}}}")
        elif isinstance(c, Block):
            lines.extend(_format_block(c, indent))
        else:
            lines.append(f"{pad}{format_primitive(c)};")
    return lines


def _format_if(c: If, indent: int) -> list:
    pad = "  " * indent
    lines = [f"{pad}if {format_expr(c.cond)} {{"]
    lines.extend(_format_block(c.then, indent + 1))
    if c.orelse.body:
        lines.append(f"{pad}}} else {{")
        lines.extend(_format_block(c.orelse, indent + 1))
    lines.append(f"{pad}}}")
    return lines


def format_contract(k: Contract) -> str:
    lines = [f"contract {k.name} {{"]
    for f in k.fields:
        lines.append(f"  field {f.name}{' map' if f.is_map else ''};")
    for m in k.methods:
        head = "enter" if m.name is None else f"method {m.name}({', '.join(m.params)})"
        lines.append(f"  {head} {{")
        if m.locals:
            lines.append(f"    var {', '.join(m.locals)};")
        lines.extend(_format_block(m.body, 2))
        lines.append("  }")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Validation


@dataclass(frozen=True, order=True)
class Diagnostic:
    code: str
    contract: str
    message: str


def validate_context(ctx: CodeContext, strict: bool = True) -> list:
    """Check cross-contract invariants; returns a sorted list of diagnostics.

    With ``strict`` set, static call targets and ``@`` references must name a
    contract of the context.
    """
    diags = set()
    for name in ctx.duplicates:
        diags.add(Diagnostic("duplicate-contract", name, f"contract {name} declared more than once"))
    owners: dict = {}
    for k in ctx:
        if not _IDENT.match(k.name) or k.name in KEYWORDS:
            diags.add(Diagnostic("bad-identifier", k.name, f"invalid contract name {k.name!r}"))
        for f in k.fields:
            owners.setdefault(f.name, set()).add(k.name)
    for fname, ks in owners.items():
        if len(ks) > 1:
            for kname in ks:
                others = ", ".join(sorted(ks - {kname}))
                diags.add(Diagnostic(
                    "shared-field", kname,
                    f"field name shared across contracts: {fname} (also in {others})"))
    for k in ctx:
        locals_ = k.locals
        for prim in iter_primitives(k.body):
            if isinstance(prim, (ReadField, WriteField)):
                decl = k.field_map.get(prim.field)
                if decl is None:
                    diags.add(Diagnostic("encapsulation", k.name,
                                         f"access to field {prim.field} not declared by {k.name}"))
                elif decl.is_map != (prim.key is not None):
                    diags.add(Diagnostic("map-key", k.name, f"key use does not match declaration of {prim.field}"))
            if isinstance(prim, Call) and not prim.dynamic and strict:
                if prim.callee not in ctx:
                    diags.add(Diagnostic("unresolved-call", k.name,
                                         f"unresolved call target {prim.callee}"))
                else:
                    callee = ctx[prim.callee]
                    try:
                        callee.selector(prim.method)
                    except KeyError:
                        diags.add(Diagnostic("unresolved-method", k.name,
                                             f"unresolved call target {prim.callee}.{prim.method}"))
        for e in iter_exprs(k.body):
            for v in expr_vars(e):
                if v not in locals_:
                    diags.add(Diagnostic("undeclared-local", k.name, f"undeclared local {v}"))
            if strict:
                for ref in expr_objrefs(e):
                    if ref not in ctx:
                        diags.add(Diagnostic("unresolved-ref", k.name, f"unresolved object reference @{ref}"))
    return sorted(diags)
