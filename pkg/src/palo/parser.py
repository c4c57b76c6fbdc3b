"""Surface syntax for theories and formulas, and a pretty-printer.

Grammar (EBNF; ``#`` starts a comment running to the end of the line)::

    file        = { decl } ;
    decl        = "type" NAME ":" INT ";"
                | "sort" NAME ":" NAME { NAME } ";"
                | "var" NAME ":" NAME { NAME } ";"
                | "const" NAME ":" NAME ";"
                | "fun" NAME ":" { NAME } "->" NAME ";"
                | "pred" NAME ":" { NAME } ";"
                | "prop" NAME ";"
                | "complexity" ( "default" | NAME { NAME } ) "=" INT ";"
                | "bind" NAME "=" source ";"
                | "param" NAME "=" NUMBER ";"
                | "axiom" [ NAME ":" ] [ interval ] [ "weight" NUMBER ] formula ";" ;
    source      = "synthetic" | "csv" "(" STRING [ "," "index" "=" NAME ] ")" ;
    interval    = "[" NUMBER "," NUMBER "]" ;
    formula     = binder | iff ;
    binder      = ( "forall" | "exists" | "mean" | "\\" ) NAME { "," NAME } ":" NAME "." formula ;
    iff         = implies { "<=>" implies } ;
    implies     = or [ "=>" ( implies | binder ) ] ;
    or          = and { "|" ( and | binder ) } ;
    and         = unary { "&" ( unary | binder ) } ;
    unary       = "~" ( unary | binder ) | atom ;
    atom        = "true" | "false" | NAME [ "(" args ")" ] | "(" formula { "," formula } ")" ;
    args        = formula { "," formula } ;

Precedence from tightest: ``~``, ``&``, ``|``, ``=>``, ``<=>``.  ``&``, ``|``
and ``<=>`` associate to the left, ``=>`` to the right.  A binder body extends
as far to the right as possible.  Without an interval an axiom gets [0, 1].
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from .logic import (
    And,
    Axiom,
    Bottom,
    Const,
    Exists,
    Forall,
    FunApp,
    Iff,
    Implies,
    Lambda,
    Mean,
    Not,
    Or,
    PredApp,
    PropConst,
    Signature,
    Term,
    Theory,
    Top,
    Tuple,
    TypeSignature,
    Var,
    WellFormednessError,
    check_well_formed,
)

DEFAULT_INTERVAL = (0.0, 1.0)


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    column: int
    length: int

    def __post_init__(self):
        if self.line < 1 or self.column < 1:
            raise ValueError("line and column are 1-based")

    def __str__(self):
        return f"{self.file}:{self.line}:{self.column}"


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # LexError, SyntaxError, DuplicateDeclaration, IntervalError, TypeError
    message: str
    span: Optional[SourceSpan]

    def __str__(self):
        where = f"{self.span}: " if self.span else ""
        return f"{where}{self.kind}: {self.message}"


class ParseError(ValueError):
    """Carries every diagnostic found in the input."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))

    @property
    def kinds(self) -> list[str]:
        return [d.kind for d in self.diagnostics]


class LexError(ParseError):
    pass


@dataclass(frozen=True)
class DataSource:
    kind: str  # "csv" or "synthetic"
    path: Optional[str] = None
    index: Optional[str] = None  # for pair sorts: rows are index tuples into this sort


@dataclass
class TheoryFile:
    signature: Signature
    theory: Theory
    sort_data: dict[str, DataSource] = field(default_factory=dict)
    hyper: dict[str, float] = field(default_factory=dict)
    axiom_spans: list[Optional[SourceSpan]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# lexer
# ---------------------------------------------------------------------------

KEYWORDS = {
    "type", "sort", "var", "const", "fun", "pred", "prop", "complexity", "bind", "param", "axiom",
    "weight", "forall", "exists", "mean", "true", "false", "csv", "synthetic", "index", "default",
}
_BINDERS = {"forall": Forall, "exists": Exists, "mean": Mean, "\\": Lambda}

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<num>\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<str>"[^"\n]*")
  | (?P<op><=>|=>|->|[~&|()\[\],:;.=\\])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num, name, kw, str, op, eof
    text: str
    span: SourceSpan


def tokenize(text: str, file: str = "<string>") -> list[Token]:
    out: list[Token] = []
    pos, line, col = 0, 1, 1
    errors = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            errors.append(Diagnostic("LexError", f"unexpected character {text[pos]!r}", SourceSpan(file, line, col, 1)))
            pos += 1
            col += 1
            continue
        kind = m.lastgroup
        tok = m.group()
        if kind != "ws":
            if kind == "name" and tok in KEYWORDS:
                kind = "kw"
            out.append(Token(kind, tok, SourceSpan(file, line, col, len(tok))))
        nl = tok.count("\n")
        if nl:
            line += nl
            col = len(tok) - tok.rindex("\n")
        else:
            col += len(tok)
        pos = m.end()
    if errors:
        raise LexError(errors)
    out.append(Token("eof", "", SourceSpan(file, line, col, 0)))
    return out


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Stop(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0
        self.spans: dict[int, SourceSpan] = {}

    # token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def fail(self, msg: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        shown = tok.text or "end of input"
        raise _Stop(Diagnostic("SyntaxError", f"{msg}, found {shown!r}", tok.span))

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(f"expected {text!r}")
        return self.advance()

    def name(self) -> Token:
        if self.tok.kind != "name":
            self.fail("expected a name")
        return self.advance()

    def number(self) -> float:
        if self.tok.kind != "num":
            self.fail("expected a number")
        return float(self.advance().text)

    def mark(self, term: Term, tok: Token) -> Term:
        self.spans[id(term)] = tok.span
        return term

    # formulas (symbols are resolved later)
    def formula(self) -> Term:
        if self.tok.text in _BINDERS and self.tok.kind in ("kw", "op"):
            return self.binder()
        return self.iff()

    def binder(self) -> Term:
        start = self.advance()
        cls = _BINDERS[start.text]
        names = [self.name()]
        while self.at(","):
            self.advance()
            names.append(self.name())
        self.expect(":")
        sort = self.name().text
        self.expect(".")
        body = self.formula()
        for n in reversed(names):
            body = self.mark(cls(n.text, sort, body), n)
        return body

    def operand(self, sub) -> Term:
        if self.tok.text in _BINDERS and self.tok.kind in ("kw", "op"):
            return self.binder()
        return sub()

    def iff(self) -> Term:
        left = self.implies()
        while self.at("<=>"):
            op = self.advance()
            right = self.operand(self.implies)
            left = self.mark(Iff(left, right), op)
        return left

    def implies(self) -> Term:
        left = self.or_()
        if self.at("=>"):
            op = self.advance()
            right = self.operand(self.implies)
            return self.mark(Implies(left, right), op)
        return left

    def or_(self) -> Term:
        left = self.and_()
        while self.at("|"):
            op = self.advance()
            left = self.mark(Or(left, self.operand(self.and_)), op)
        return left

    def and_(self) -> Term:
        left = self.unary()
        while self.at("&"):
            op = self.advance()
            left = self.mark(And(left, self.operand(self.unary)), op)
        return left

    def unary(self) -> Term:
        if self.at("~"):
            op = self.advance()
            return self.mark(Not(self.operand(self.unary)), op)
        return self.atom()

    def atom(self) -> Term:
        tok = self.tok
        if self.at("true"):
            self.advance()
            return self.mark(Top(), tok)
        if self.at("false"):
            self.advance()
            return self.mark(Bottom(), tok)
        if self.at("("):
            self.advance()
            items = [self.formula()]
            while self.at(","):
                self.advance()
                items.append(self.formula())
            self.expect(")")
            if len(items) == 1:
                return items[0]
            return self.mark(Tuple(tuple(items)), tok)
        if tok.kind == "name":
            self.advance()
            if self.at("("):
                self.advance()
                args = [self.formula()]
                while self.at(","):
                    self.advance()
                    args.append(self.formula())
                self.expect(")")
                return self.mark(PredApp(tok.text, tuple(args)), tok)
            return self.mark(Var(tok.text), tok)
        self.fail("expected a formula or term")

    def sync(self):
        """Skip to just after the next ';' for error recovery."""
        while self.tok.kind != "eof" and not self.at(";"):
            self.advance()
        if self.at(";"):
            self.advance()


def _resolve(term: Term, sig: Signature, spans: dict[int, SourceSpan], bound: frozenset = frozenset()) -> Term:
    """Turn generic applications and names into the right term kind."""

    def keep(new: Term, old: Term) -> Term:
        if id(old) in spans:
            spans[id(new)] = spans[id(old)]
        return new

    if isinstance(term, Var):
        if term.name not in bound:
            if term.name in sig.constants:
                return keep(Const(term.name), term)
            if term.name in sig.propositions:
                return keep(PropConst(term.name), term)
        return term
    if isinstance(term, PredApp):
        args = tuple(_resolve(a, sig, spans, bound) for a in term.args)
        if term.pred in sig.functions:
            return keep(FunApp(term.pred, args), term)
        return keep(PredApp(term.pred, args), term)
    if isinstance(term, Tuple):
        return keep(Tuple(tuple(_resolve(a, sig, spans, bound) for a in term.items)), term)
    if isinstance(term, Not):
        return keep(Not(_resolve(term.body, sig, spans, bound)), term)
    if isinstance(term, (And, Or, Implies, Iff)):
        return keep(type(term)(_resolve(term.left, sig, spans, bound), _resolve(term.right, sig, spans, bound)), term)
    if isinstance(term, (Forall, Exists, Mean, Lambda)):
        return keep(type(term)(term.var, term.sort, _resolve(term.body, sig, spans, bound | {term.var})), term)
    return term


def _type_diagnostics(err: WellFormednessError, spans, fallback: Optional[SourceSpan]) -> list[Diagnostic]:
    return [Diagnostic("TypeError", f"{e.kind}: {e.message}", spans.get(id(e.term), fallback)) for e in err.errors]


def parse_formula(text: str, sig: Signature, file: str = "<formula>", check: bool = True) -> Term:
    """Parse (and by default type-check) a closed or open formula or term."""
    p = _Parser(tokenize(text, file))
    try:
        raw = p.formula()
        if p.tok.kind != "eof":
            p.fail("unexpected trailing input")
    except _Stop as stop:
        raise ParseError([stop.diag]) from None
    term = _resolve(raw, sig, p.spans)
    if not check:
        return term
    try:
        return check_well_formed(term, sig)
    except WellFormednessError as e:
        raise ParseError(_type_diagnostics(e, p.spans, p.toks[0].span)) from None


def parse_theory_file(text: str, file: str = "<theory>", require_bindings: bool = True) -> TheoryFile:
    """Parse a complete theory file; raises :class:`ParseError` with all diagnostics."""
    p = _Parser(tokenize(text, file))
    diags: list[Diagnostic] = []
    types: dict[str, int] = {}
    complexity: dict[tuple, int] = {}
    default_k = [16]
    sorts: dict[str, tuple] = {}
    variables: dict[str, tuple] = {}
    constants: dict[str, str] = {}
    functions: dict[str, tuple] = {}
    predicates: dict[str, tuple] = {}
    props: dict[str, bool] = {}
    binds: dict[str, DataSource] = {}
    hyper: dict[str, float] = {}
    raw_axioms: list = []  # (name, interval, weight, term, span)
    symbol_spaces = (constants, functions, props, predicates, sorts, variables)

    def declare(table: dict, tok: Token, value, what: str):
        if tok.text in table or (table is not types and any(tok.text in t for t in symbol_spaces)):
            diags.append(Diagnostic("DuplicateDeclaration", f"{what} {tok.text!r} is already declared", tok.span))
            return
        table[tok.text] = value

    def type_list(stop: str) -> tuple[str, ...]:
        out = []
        while p.tok.kind == "name":
            out.append(p.advance().text)
        if not p.at(stop):
            p.fail(f"expected a type name or {stop!r}")
        return tuple(out)

    while p.tok.kind != "eof":
        kw = p.tok
        try:
            if p.at("type"):
                p.advance()
                n = p.name()
                p.expect(":")
                dim = p.number()
                if dim != int(dim) or dim < 1:
                    p.fail("dimension must be a positive integer", p.toks[p.i - 1])
                declare(types, n, int(dim), "type")
            elif p.at("sort") or p.at("var"):
                p.advance()
                n = p.name()
                p.expect(":")
                dom = type_list(";")
                if not dom:
                    p.fail("expected at least one type")
                declare(sorts if kw.text == "sort" else variables, n, dom, kw.text)
            elif p.at("const"):
                p.advance()
                n = p.name()
                p.expect(":")
                declare(constants, n, p.name().text, "constant")
            elif p.at("fun"):
                p.advance()
                n = p.name()
                p.expect(":")
                dom = type_list("->")
                p.expect("->")
                declare(functions, n, (dom, p.name().text), "function")
            elif p.at("pred"):
                p.advance()
                n = p.name()
                p.expect(":")
                declare(predicates, n, type_list(";"), "predicate")
            elif p.at("prop"):
                p.advance()
                declare(props, p.name(), True, "proposition")
            elif p.at("complexity"):
                p.advance()
                if p.at("default"):
                    p.advance()
                    dom = None
                else:
                    dom = type_list("=")
                p.expect("=")
                k = p.number()
                if k != int(k) or k < 0:
                    p.fail("complexity must be a non-negative integer", p.toks[p.i - 1])
                if dom is None:
                    default_k[0] = int(k)
                else:
                    complexity[dom] = int(k)
            elif p.at("bind"):
                p.advance()
                n = p.name()
                p.expect("=")
                if p.at("synthetic"):
                    p.advance()
                    src = DataSource("synthetic")
                else:
                    p.expect("csv")
                    p.expect("(")
                    if p.tok.kind != "str":
                        p.fail("expected a quoted file path")
                    path = p.advance().text[1:-1]
                    index = None
                    if p.at(","):
                        p.advance()
                        p.expect("index")
                        p.expect("=")
                        index = p.name().text
                    p.expect(")")
                    src = DataSource("csv", path, index)
                if n.text in binds:
                    diags.append(Diagnostic("DuplicateDeclaration", f"sort {n.text!r} is bound twice", n.span))
                binds[n.text] = src
            elif p.at("param"):
                p.advance()
                n = p.name()
                p.expect("=")
                if n.text in hyper:
                    diags.append(Diagnostic("DuplicateDeclaration", f"param {n.text!r} is set twice", n.span))
                hyper[n.text] = p.number()
            elif p.at("axiom"):
                p.advance()
                label = None
                if p.tok.kind == "name" and p.toks[p.i + 1].text == ":":
                    label = p.advance().text
                    p.advance()
                interval = DEFAULT_INTERVAL
                if p.at("["):
                    open_tok = p.advance()
                    lo = p.number()
                    p.expect(",")
                    hi = p.number()
                    p.expect("]")
                    if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
                        diags.append(Diagnostic("IntervalError", "interval bounds must lie in [0, 1]", open_tok.span))
                    elif lo > hi:
                        diags.append(Diagnostic("IntervalError", f"interval lower exceeds upper: [{lo:g}, {hi:g}]",
                                                open_tok.span))
                    interval = (lo, hi)
                weight = None
                if p.at("weight"):
                    p.advance()
                    weight = p.number()
                    if not weight > 0:
                        p.fail("fixed weight must be positive", p.toks[p.i - 1])
                start = p.tok
                term = p.formula()
                raw_axioms.append((label, interval, weight, term, start.span))
            else:
                p.fail("expected a declaration")
            p.expect(";")
        except _Stop as stop:
            diags.append(stop.diag)
            p.sync()

    sig = None
    try:
        ts = TypeSignature(frozenset(types), dict(types), complexity, default_k[0])
        sig = Signature(ts, constants, functions, frozenset(props), predicates, sorts, variables)
    except ValueError as e:
        diags.append(Diagnostic("TypeError", str(e), None))

    axioms = []
    spans_out = []
    if sig is not None:
        for label, (lo, hi), weight, raw, span in raw_axioms:
            term = _resolve(raw, sig, p.spans)
            try:
                typed = check_well_formed(term, sig)
            except WellFormednessError as e:
                diags.extend(_type_diagnostics(e, p.spans, span))
                continue
            if lo > hi or not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
                continue
            try:
                axioms.append(Axiom(lo, typed, hi, weight, label))
                spans_out.append(span)
            except ValueError as e:
                diags.append(Diagnostic("TypeError", str(e), span))
        for s in binds:
            if s not in sorts:
                diags.append(Diagnostic("TypeError", f"bind refers to undeclared sort {s!r}", None))
        for s, src in binds.items():
            if src.index is not None and src.index not in sorts:
                diags.append(Diagnostic("TypeError", f"bind {s} indexes undeclared sort {src.index!r}", None))
        if require_bindings:
            used = sorted({t.sort for ax in axioms for t in _binders(ax.formula)})
            for s in used:
                if s not in binds:
                    diags.append(Diagnostic("TypeError", f"sort {s!r} has no data binding (use `bind {s} = synthetic;`)",
                                            None))
    theory = None
    if not diags:
        try:
            theory = Theory(tuple(axioms))
        except ValueError as e:
            diags.append(Diagnostic("DuplicateDeclaration", str(e), None))
    if diags:
        raise ParseError(diags)
    return TheoryFile(sig, theory, binds, hyper, spans_out)


def _binders(term: Term):
    if isinstance(term, (Forall, Exists, Mean, Lambda)):
        yield term
    for c in term.children():
        yield from _binders(c)


def load_theory_file(path, require_bindings: bool = True) -> TheoryFile:
    from pathlib import Path

    path = Path(path)
    return parse_theory_file(path.read_text(encoding="utf-8"), str(path), require_bindings)


# ---------------------------------------------------------------------------
# pretty-printer
# ---------------------------------------------------------------------------

_PREC = {Iff: 1, Implies: 2, Or: 3, And: 4, Not: 5}
_SYM = {Iff: "<=>", Implies: "=>", Or: "|", And: "&"}
_KW = {Forall: "forall", Exists: "exists", Mean: "mean", Lambda: "\\"}


def pretty(term: Term) -> str:
    """Print with minimal parentheses; nested same-kind binders over one sort are merged."""
    return _pp(term, 0, True)


def _pp(t: Term, ctx: int, tail: bool) -> str:
    """``ctx``: binding strength of the surrounding operator; ``tail``: nothing follows."""
    if isinstance(t, Var):
        return t.name
    if isinstance(t, (Const, PropConst)):
        return t.name
    if isinstance(t, Top):
        return "true"
    if isinstance(t, Bottom):
        return "false"
    if isinstance(t, (PredApp, FunApp)):
        name = t.pred if isinstance(t, PredApp) else t.fn
        return f"{name}({', '.join(_pp(a, 0, True) for a in t.args)})"
    if isinstance(t, Tuple):
        return "(" + ", ".join(_pp(a, 0, True) for a in t.items) + ")"
    if isinstance(t, Not):
        return "~" + _pp(t.body, _PREC[Not], tail)
    if isinstance(t, (And, Or, Implies, Iff)):
        prec = _PREC[type(t)]
        wrap = prec < ctx
        inner_tail = True if wrap else tail
        right_assoc = isinstance(t, Implies)
        lctx = prec + 1 if right_assoc else prec
        rctx = prec if right_assoc else prec + 1
        s = f"{_pp(t.left, lctx, False)} {_SYM[type(t)]} {_pp(t.right, rctx, inner_tail)}"
        return f"({s})" if wrap else s
    if isinstance(t, (Forall, Exists, Mean, Lambda)):
        names = [t.var]
        body = t.body
        while type(body) is type(t) and body.sort == t.sort and body.var not in names:
            names.append(body.var)
            body = body.body
        s = f"{_KW[type(t)]} {','.join(names)}:{t.sort} . {_pp(body, 0, True)}"
        return s if tail else f"({s})"
    raise TypeError(f"cannot print {t!r}")


def pretty_theory_file(tf: TheoryFile) -> str:
    sig = tf.signature
    ts = sig.type_sig
    lines = []
    for t in sorted(ts.data_types):
        lines.append(f"type {t} : {ts.dim[t]};")
    if ts.default_complexity != 16:
        lines.append(f"complexity default = {ts.default_complexity};")
    for dom, k in sorted(ts.complexity.items()):
        lines.append(f"complexity {' '.join(dom)} = {k};")
    for s, dom in sig.sorts.items():
        lines.append(f"sort {s} : {' '.join(dom)};")
    for x, dom in sig.variables.items():
        lines.append(f"var {x} : {' '.join(dom)};")
    for c, t in sig.constants.items():
        lines.append(f"const {c} : {t};")
    for f, (dom, cod) in sig.functions.items():
        lines.append(f"fun {f} : {' '.join(dom + ('->', cod))};")
    for g in sorted(sig.propositions):
        lines.append(f"prop {g};")
    for p_, dom in sig.predicates.items():
        lines.append(f"pred {p_} : {' '.join(dom)};")
    for s, src in tf.sort_data.items():
        if src.kind == "synthetic":
            lines.append(f"bind {s} = synthetic;")
        else:
            idx = f", index={src.index}" if src.index else ""
            lines.append(f'bind {s} = csv("{src.path}"{idx});')
    for k, v in tf.hyper.items():
        lines.append(f"param {k} = {v!r};")
    for ax in tf.theory.axioms:
        parts = ["axiom"]
        if ax.name:
            parts.append(f"{ax.name}:")
        parts.append(f"[{ax.lower!r}, {ax.upper!r}]")
        if ax.weight is not None:
            parts.append(f"weight {float(ax.weight)!r}")
        parts.append(pretty(ax.formula))
        lines.append(" ".join(parts) + ";")
    return "\n".join(lines) + "\n"
