"""A MultiQuaTEx subset: recursive state functions plus expectation directives.

Example::

    obsAtStep(x, obs) =
      if (s.rval("steps") == x) then s.rval(obs)
      else # obsAtStep(x, obs) fi;
    eval parametric(E[ obsAtStep(x, "logGDP") ], x, 1, 10, 201);

``#`` evaluates a call in the next simulation state. It may only appear in
tail position, which lets :func:`evaluate` run every directive instance over
one simulation, advancing the run whenever some instance asks for the next
state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Rval:
    arg: "Expr"


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]


@dataclass(frozen=True)
class Next:
    """``# f(args)``: evaluate ``f(args)`` in the next state."""

    call: Call


Expr = Union[Num, Str, Var, Rval, Neg, BinOp, If, Call, Next]


@dataclass(frozen=True)
class FunDef:
    name: str
    params: tuple[str, ...]
    body: Expr


@dataclass(frozen=True)
class Single:
    expr: Expr


@dataclass(frozen=True)
class Parametric:
    expr: Expr
    param: str
    start: float
    step: float
    end: float


Directive = Union[Single, Parametric]


@dataclass(frozen=True)
class QuerySpec:
    functions: tuple[FunDef, ...]
    directives: tuple[Directive, ...]

    def function(self, name: str) -> FunDef:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def instances(self) -> list["Instance"]:
        out = []
        multi = len(self.directives) > 1
        for i, d in enumerate(self.directives):
            if isinstance(d, Parametric):
                for v in instances(d):
                    label = format_number(v)
                    out.append(Instance(i, d.param, v, f"d{i}:{label}" if multi else label))
            else:
                out.append(Instance(i, None, None, f"d{i}" if multi else "E"))
        return out


@dataclass(frozen=True)
class Instance:
    directive: int
    param: str | None
    value: float | None
    label: str


# --------------------------------------------------------------------------
# errors


class QuatexError(Exception):
    """Base error; ``line`` and ``col`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.col = col


class QuatexLexError(QuatexError):
    pass


class QuatexSyntaxError(QuatexError):
    def __init__(self, message, line, col, expected=()):
        super().__init__(message, line, col)
        self.expected = tuple(expected)


class QuatexSemanticError(QuatexError):
    pass


class QueryEvaluationError(QuatexError):
    """Evaluation failed for one instance; ``cause`` holds the original error."""

    def __init__(self, message: str, instance: Instance | None = None, cause: Exception | None = None):
        super().__init__(message)
        self.instance = instance
        self.cause = cause


class IncompleteQueryError(QueryEvaluationError):
    pass


# --------------------------------------------------------------------------
# lexer


@dataclass(frozen=True)
class Token:
    kind: str  # NUM, STR, ID, EOF or the punctuation itself
    text: str
    line: int
    col: int


_PUNCT2 = ("==",)
_PUNCT1 = "()[],;=<>+-*/#."


def tokenize(source: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(k: int) -> None:
        nonlocal i, line, col
        for ch in source[i : i + k]:
            if ch == "\n":
                line += 1
                col = 1
            else:
                col += 1
        i += k

    while i < n:
        ch = source[i]
        if ch in " \t\r\n":
            advance(1)
        elif source.startswith("//", i):
            j = source.find("\n", i)
            advance((n if j < 0 else j) - i)
        elif ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k].isdigit():
                    while k < n and source[k].isdigit():
                        k += 1
                    j = k
            toks.append(Token("NUM", source[i:j], line, col))
            advance(j - i)
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            toks.append(Token("ID", source[i:j], line, col))
            advance(j - i)
        elif ch == '"':
            j = i + 1
            buf = []
            while j < n and source[j] != '"':
                if source[j] == "\n":
                    break
                if source[j] == "\\" and j + 1 < n:
                    j += 1
                buf.append(source[j])
                j += 1
            if j >= n or source[j] != '"':
                raise QuatexLexError("unterminated string literal", line, col)
            toks.append(Token("STR", "".join(buf), line, col))
            advance(j + 1 - i)
        elif source.startswith(_PUNCT2, i):
            toks.append(Token(source[i : i + 2], source[i : i + 2], line, col))
            advance(2)
        elif ch in _PUNCT1:
            toks.append(Token(ch, ch, line, col))
            advance(1)
        else:
            raise QuatexLexError(f"unexpected character {ch!r}", line, col)
    toks.append(Token("EOF", "", line, col))
    return toks


# --------------------------------------------------------------------------
# parser

KEYWORDS = {"if", "then", "else", "fi", "eval", "parametric", "E"}
COMPARISONS = ("==", "<", ">")


class _Parser:
    def __init__(self, source: str):
        self.toks = tokenize(source)
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    def at_keyword(self, word: str) -> bool:
        return self.at("ID", word)

    def fail(self, *expected: str):
        t = self.tok
        found = "end of input" if t.kind == "EOF" else repr(t.text)
        raise QuatexSyntaxError(
            f"expected {' or '.join(expected)}, found {found}", t.line, t.col, expected
        )

    def expect(self, kind: str, text: str | None = None) -> Token:
        if not self.at(kind, text):
            self.fail(repr(text) if text is not None else kind)
        t = self.tok
        self.pos += 1
        return t

    def keyword(self, word: str) -> Token:
        if not self.at_keyword(word):
            self.fail(repr(word))
        return self.expect("ID")

    # query := fundef* directive+
    def query(self) -> QuerySpec:
        funs = []
        while self.at("ID") and not self.at_keyword("eval"):
            funs.append(self.fundef())
        directives = []
        while self.at_keyword("eval"):
            directives.append(self.directive())
        if not directives:
            self.fail("function definition", "'eval'")
        if not self.at("EOF"):
            self.fail("'eval'", "end of input")
        return QuerySpec(tuple(funs), tuple(directives))

    def fundef(self) -> FunDef:
        name = self.identifier()
        self.expect("(")
        params = []
        if not self.at(")"):
            params.append(self.identifier())
            while self.at(","):
                self.pos += 1
                params.append(self.identifier())
        self.expect(")")
        self.expect("=")
        body = self.expr()
        self.expect(";")
        return FunDef(name, tuple(params), body)

    def identifier(self) -> str:
        t = self.tok
        if t.kind != "ID" or t.text in KEYWORDS:
            self.fail("identifier")
        self.pos += 1
        return t.text

    def directive(self):
        self.keyword("eval")
        if self.at_keyword("parametric"):
            self.pos += 1
            self.expect("(")
            expr = self.expectation()
            self.expect(",")
            param = self.identifier()
            nums = []
            for _ in range(3):
                self.expect(",")
                nums.append(self.signed_number())
            self.expect(")")
            self.expect(";")
            return Parametric(expr, param, *nums)
        expr = self.expectation()
        self.expect(";")
        return Single(expr)

    def expectation(self) -> Expr:
        self.keyword("E")
        self.expect("[")
        e = self.expr()
        self.expect("]")
        return e

    def signed_number(self) -> float:
        sign = 1.0
        if self.at("-"):
            self.pos += 1
            sign = -1.0
        return sign * float(self.expect("NUM").text)

    # expr := comparison; if-then-else-fi is a primary, closed by 'fi'
    def expr(self) -> Expr:
        return self.comparison()

    def conditional(self) -> Expr:
        t = self.tok
        self.pos += 1
        self.expect("(")
        cond = self.expr()
        self.expect(")")
        self.keyword("then")
        then = self.expr()
        self.keyword("else")
        orelse = self.expr()
        if not self.at_keyword("fi"):
            self.fail(f"'fi' closing the if at {t.line}:{t.col}")
        self.pos += 1
        return If(cond, then, orelse)

    def comparison(self) -> Expr:
        left = self.additive()
        while self.tok.kind in COMPARISONS:
            op = self.tok.kind
            self.pos += 1
            left = BinOp(op, left, self.additive())
        return left

    def additive(self) -> Expr:
        left = self.term()
        while self.tok.kind in ("+", "-"):
            op = self.tok.kind
            self.pos += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.tok.kind in ("*", "/"):
            op = self.tok.kind
            self.pos += 1
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.at("-"):
            self.pos += 1
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Expr:
        t = self.tok
        if t.kind == "NUM":
            self.pos += 1
            return Num(float(t.text))
        if t.kind == "STR":
            self.pos += 1
            return Str(t.text)
        if t.kind == "(":
            self.pos += 1
            e = self.expr()
            self.expect(")")
            return e
        if t.kind == "#":
            self.pos += 1
            name = self.identifier()
            return Next(Call(name, self.arguments()))
        if t.kind == "ID" and t.text == "s" and self.toks[self.pos + 1].kind == ".":
            self.pos += 2
            self.keyword("rval")
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Rval(arg)
        if t.kind == "ID" and t.text == "if":
            return self.conditional()
        if t.kind == "ID" and t.text not in KEYWORDS:
            self.pos += 1
            if self.at("("):
                return Call(t.text, self.arguments())
            return Var(t.text)
        self.fail("expression")

    def arguments(self) -> tuple[Expr, ...]:
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expr())
            while self.at(","):
                self.pos += 1
                args.append(self.expr())
        self.expect(")")
        return tuple(args)


def parse(source: str) -> QuerySpec:
    """Parse and check a query; raises a :class:`QuatexError` subclass on failure."""
    query = _Parser(source).query()
    check(query)
    return query


# --------------------------------------------------------------------------
# semantic checks


def _children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Rval):
        return (e.arg,)
    if isinstance(e, Neg):
        return (e.operand,)
    if isinstance(e, BinOp):
        return (e.left, e.right)
    if isinstance(e, If):
        return (e.cond, e.then, e.orelse)
    if isinstance(e, Call):
        return e.args
    if isinstance(e, Next):
        return e.call.args
    return ()


def _tail_calls(e: Expr):
    """Calls (plain or ``#``) reachable in tail position."""
    if isinstance(e, If):
        yield from _tail_calls(e.then)
        yield from _tail_calls(e.orelse)
    elif isinstance(e, (Call, Next)):
        yield e


def _walk(e: Expr):
    yield e
    for c in _children(e):
        yield from _walk(c)


def advancing_functions(query: QuerySpec) -> set[str]:
    """Functions whose evaluation may request the next state."""
    adv: set[str] = set()
    changed = True
    while changed:
        changed = False
        for f in query.functions:
            if f.name in adv:
                continue
            for c in _tail_calls(f.body):
                if isinstance(c, Next) or c.name in adv:
                    adv.add(f.name)
                    changed = True
                    break
    return adv


def check(query: QuerySpec) -> None:
    seen: dict[str, FunDef] = {}
    for f in query.functions:
        if f.name in seen:
            raise QuatexSemanticError(f"function {f.name!r} defined twice")
        if len(set(f.params)) != len(f.params):
            raise QuatexSemanticError(f"function {f.name!r} repeats a parameter name")
        seen[f.name] = f
    for f in query.functions:
        _check_expr(f.body, set(f.params), seen, where=f"function {f.name!r}")
    for i, d in enumerate(query.directives):
        scope = set()
        if isinstance(d, Parametric):
            if not d.step > 0:
                raise QuatexSemanticError(f"directive {i}: parametric step must be > 0")
            if d.start > d.end:
                raise QuatexSemanticError(f"directive {i}: parametric start exceeds end")
            scope.add(d.param)
        _check_expr(d.expr, scope, seen, where=f"directive {i}")

    adv = advancing_functions(query)
    for f in query.functions:
        _check_tails(f.body, adv, f"function {f.name!r}")
    for i, d in enumerate(query.directives):
        _check_tails(d.expr, adv, f"directive {i}")
    _check_plain_cycles(query)


def _check_expr(e: Expr, scope: set[str], funs: dict[str, FunDef], where: str) -> None:
    for node in _walk(e):
        if isinstance(node, Var) and node.name not in scope:
            raise QuatexSemanticError(f"{where}: unbound name {node.name!r}")
        call = node.call if isinstance(node, Next) else node
        if isinstance(call, Call):
            f = funs.get(call.name)
            if f is None:
                raise QuatexSemanticError(f"{where}: undefined function {call.name!r}")
            if len(f.params) != len(call.args):
                raise QuatexSemanticError(
                    f"{where}: {call.name!r} takes {len(f.params)} arguments, "
                    f"got {len(call.args)}"
                )


def _check_tails(e: Expr, adv: set[str], where: str, tail: bool = True) -> None:
    if isinstance(e, Next) and not tail:
        raise QuatexSemanticError(f"{where}: '#' is only allowed in tail position")
    if isinstance(e, Call) and not tail and e.name in adv:
        raise QuatexSemanticError(
            f"{where}: call to {e.name!r} may advance the state and must be in tail position"
        )
    if isinstance(e, If):
        _check_tails(e.cond, adv, where, False)
        _check_tails(e.then, adv, where, tail)
        _check_tails(e.orelse, adv, where, tail)
        return
    for c in _children(e):
        _check_tails(c, adv, where, False)


def _check_plain_cycles(query: QuerySpec) -> None:
    # recursion without '#' would never terminate
    graph = {
        f.name: {n.name for n in _walk(f.body) if isinstance(n, Call)} for f in query.functions
    }
    state: dict[str, int] = {}

    def visit(name: str) -> None:
        state[name] = 1
        for nxt in sorted(graph[name]):
            if state.get(nxt) == 1:
                raise QuatexSemanticError(f"function {nxt!r} recurses without '#'")
            if nxt not in state:
                visit(nxt)
        state[name] = 2

    for name in graph:
        if name not in state:
            visit(name)


# --------------------------------------------------------------------------
# printing


def format_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _bare(e) -> str:
    # top-level operators need no parentheses
    if isinstance(e, BinOp):
        return f"{to_source(e.left)} {e.op} {to_source(e.right)}"
    return to_source(e)


def to_source(e) -> str:
    """Pretty-print a query or expression; ``parse(to_source(q)) == q``."""
    if isinstance(e, QuerySpec):
        lines = [to_source(f) for f in e.functions]
        lines += [to_source(d) for d in e.directives]
        return "\n".join(lines) + "\n"
    if isinstance(e, FunDef):
        return f"{e.name}({', '.join(e.params)}) =\n  {_bare(e.body)};"
    if isinstance(e, Single):
        return f"eval E[ {_bare(e.expr)} ];"
    if isinstance(e, Parametric):
        nums = ", ".join(format_number(v) for v in (e.start, e.step, e.end))
        return f"eval parametric(E[ {_bare(e.expr)} ], {e.param}, {nums});"
    if isinstance(e, Num):
        return format_number(e.value)
    if isinstance(e, Str):
        return _quote(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Rval):
        return f"s.rval({to_source(e.arg)})"
    if isinstance(e, Neg):
        return f"(-{to_source(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_source(e.left)} {e.op} {to_source(e.right)})"
    if isinstance(e, If):
        return (
            f"if ({_bare(e.cond)}) then {to_source(e.then)} "
            f"else {to_source(e.orelse)} fi"
        )
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_source(a) for a in e.args)})"
    if isinstance(e, Next):
        return f"# {to_source(e.call)}"
    raise TypeError(f"cannot print {e!r}")


# --------------------------------------------------------------------------
# evaluation


def instances(directive: Parametric) -> list[float]:
    """Bindings start, start+step, ... up to end (inclusive when hit exactly)."""
    count = math.floor((directive.end - directive.start) / directive.step + 1e-9) + 1
    return [directive.start + k * directive.step for k in range(count)]


REAL_TOL = 1e-9


def _equal(a, b) -> bool:
    if isinstance(a, str) or isinstance(b, str):
        return a == b
    if float(a).is_integer() and float(b).is_integer():
        return a == b
    return abs(a - b) <= REAL_TOL


class _Pending:
    __slots__ = ("fun", "args")

    def __init__(self, fun: FunDef, args: tuple):
        self.fun = fun
        self.args = args


class _Evaluator:
    def __init__(self, query: QuerySpec, sim):
        self.funs = {f.name: f for f in query.functions}
        self.sim = sim

    def tail(self, e: Expr, env: dict):
        """Evaluate in tail position: a value, or a :class:`_Pending` call."""
        while True:
            if isinstance(e, If):
                e = e.then if self.truth(e.cond, env) else e.orelse
            elif isinstance(e, Next):
                f = self.funs[e.call.name]
                return _Pending(f, tuple(self.value(a, env) for a in e.call.args))
            elif isinstance(e, Call):
                f = self.funs[e.name]
                env = dict(zip(f.params, (self.value(a, env) for a in e.args)))
                e = f.body
            else:
                return self.value(e, env)

    def resume(self, pending: _Pending):
        return self.tail(pending.fun.body, dict(zip(pending.fun.params, pending.args)))

    def truth(self, e: Expr, env: dict) -> bool:
        v = self.value(e, env)
        if not isinstance(v, bool):
            raise QueryEvaluationError(f"condition {to_source(e)} is not a comparison")
        return v

    def number(self, e: Expr, env: dict) -> float:
        v = self.value(e, env)
        if isinstance(v, (bool, str)):
            raise QueryEvaluationError(f"{to_source(e)} is not a number")
        return v

    def value(self, e: Expr, env: dict):
        if isinstance(e, Num):
            return e.value
        if isinstance(e, Str):
            return e.value
        if isinstance(e, Var):
            return env[e.name]
        if isinstance(e, Rval):
            name = self.value(e.arg, env)
            if not isinstance(name, str):
                raise QueryEvaluationError("s.rval expects an observable name")
            return float(self.sim.eval(name))
        if isinstance(e, Neg):
            return -self.number(e.operand, env)
        if isinstance(e, BinOp):
            if e.op == "==":
                return _equal(self.value(e.left, env), self.value(e.right, env))
            a = self.number(e.left, env)
            b = self.number(e.right, env)
            if e.op == "<":
                return a < b
            if e.op == ">":
                return a > b
            if e.op == "+":
                return a + b
            if e.op == "-":
                return a - b
            if e.op == "*":
                return a * b
            if b == 0.0:
                raise QueryEvaluationError(f"division by zero in {to_source(e)}")
            return a / b
        if isinstance(e, (If, Call)):
            out = self.tail(e, env)
            assert not isinstance(out, _Pending)  # ruled out by check()
            return out
        raise QueryEvaluationError(f"'#' outside tail position in {to_source(e)}")


def evaluate(query: QuerySpec, run) -> list[float]:
    """Evaluate every directive instance over a single, freshly reset run.

    Returns one value per entry of ``query.instances()``, in that order.
    """
    insts = query.instances()
    ev = _Evaluator(query, run)
    results: list[float | None] = [None] * len(insts)
    pending = []
    for k, inst in enumerate(insts):
        d = query.directives[inst.directive]
        env = {} if inst.param is None else {inst.param: inst.value}
        pending.append((k, d.expr, env))

    first = True
    while pending:
        waiting = []
        for k, thing, env in pending:
            try:
                out = ev.tail(thing, env) if first else ev.resume(thing)
            except QueryEvaluationError as exc:
                if exc.instance is None:
                    exc.instance = insts[k]
                raise
            except Exception as exc:
                raise QueryEvaluationError(
                    f"instance {insts[k].label}: {exc}", insts[k], exc
                ) from exc
            if isinstance(out, _Pending):
                waiting.append((k, out, None))
            elif isinstance(out, (bool, str)):
                raise QueryEvaluationError(
                    f"instance {insts[k].label}: result {out!r} is not a number", insts[k]
                )
            else:
                results[k] = out
        first = False
        if waiting:
            if run.step >= run.horizon:
                labels = ", ".join(insts[k].label for k, _, _ in waiting)
                raise IncompleteQueryError(
                    f"run reached its horizon ({run.horizon}) with pending instances: {labels}",
                    insts[waiting[0][0]],
                )
            run.next()
        pending = waiting
    return results  # type: ignore[return-value]
