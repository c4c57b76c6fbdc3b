"""Typed abstract syntax for signatures, terms and probabilistic theories.

Terms are immutable dataclasses.  Every node has an optional ``type`` slot that
is filled in by :func:`check_well_formed` and ignored by equality, so an
annotated term compares equal to its bare counterpart.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prod:
    """Product type ``T1 ... Tn`` over data types (a data type is a 1-product)."""

    components: tuple[str, ...]

    def __str__(self) -> str:
        return " ".join(self.components)


@dataclass(frozen=True)
class PropType:
    def __str__(self) -> str:
        return "Prop"


PROP = PropType()


@dataclass(frozen=True)
class Arrow:
    """Type ``S -> T`` of a tensor abstraction."""

    domain: Prod
    codomain: "Type"

    def __str__(self) -> str:
        return f"{self.domain} -> {self.codomain}"


Type = Union[Prod, PropType, Arrow]


@dataclass(frozen=True)
class TypeSignature:
    data_types: frozenset[str]
    dim: dict[str, int]
    complexity: dict[tuple[str, ...], int] = field(default_factory=dict)
    default_complexity: int = 16

    def __post_init__(self):
        if "Prop" in self.data_types:
            raise ValueError("Prop is not a data type")
        for t in self.data_types:
            if self.dim.get(t, 0) < 1:
                raise ValueError(f"data type {t!r} needs a dimension >= 1")
        for ptype, k in self.complexity.items():
            missing = [t for t in ptype if t not in self.data_types]
            if missing:
                raise ValueError(f"complexity for unknown data types {missing}")
            if k < 0:
                raise ValueError("complexity must be non-negative")

    def K(self, arg_types: tuple[str, ...]) -> int:
        return self.complexity.get(tuple(arg_types), self.default_complexity)

    def L(self, arg_types: tuple[str, ...]) -> int:
        return sum(self.dim[t] for t in arg_types)


@dataclass(frozen=True)
class Signature:
    type_sig: TypeSignature
    constants: dict[str, str] = field(default_factory=dict)
    functions: dict[str, tuple[tuple[str, ...], str]] = field(default_factory=dict)
    propositions: frozenset[str] = frozenset()
    predicates: dict[str, tuple[str, ...]] = field(default_factory=dict)
    sorts: dict[str, tuple[str, ...]] = field(default_factory=dict)
    variables: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        spaces = {
            "constant": set(self.constants),
            "function": set(self.functions),
            "proposition": set(self.propositions),
            "predicate": set(self.predicates),
            "sort": set(self.sorts),
            "variable": set(self.variables),
        }
        for (a, sa), (b, sb) in itertools.combinations(spaces.items(), 2):
            clash = sa & sb
            if clash:
                raise ValueError(f"symbols declared both as {a} and {b}: {sorted(clash)}")
        known = self.type_sig.data_types

        def check(types, what):
            bad = [t for t in types if t not in known]
            if bad:
                raise ValueError(f"{what} uses undeclared data types {bad}")

        for c, t in self.constants.items():
            check([t], f"constant {c}")
        for f, (dom, cod) in self.functions.items():
            check(list(dom) + [cod], f"function {f}")
        for p, dom in self.predicates.items():
            check(dom, f"predicate {p}")
        for s, dom in self.sorts.items():
            check(dom, f"sort {s}")
        for x, dom in self.variables.items():
            check(dom, f"variable {x}")

    @property
    def dim(self) -> dict[str, int]:
        return self.type_sig.dim

    def width(self, types: tuple[str, ...]) -> int:
        return self.type_sig.L(types)

    def kind_of(self, name: str) -> Optional[str]:
        for kind, space in (
            ("constant", self.constants),
            ("function", self.functions),
            ("proposition", self.propositions),
            ("predicate", self.predicates),
            ("sort", self.sorts),
            ("variable", self.variables),
        ):
            if name in space:
                return kind
        return None


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


def _tfield():
    return field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Term:
    def children(self) -> tuple["Term", ...]:
        return ()


@dataclass(frozen=True)
class Var(Term):
    name: str
    type: Optional[Type] = _tfield()


@dataclass(frozen=True)
class Const(Term):
    name: str
    type: Optional[Type] = _tfield()


@dataclass(frozen=True)
class Tuple(Term):
    items: tuple[Term, ...]
    type: Optional[Type] = _tfield()

    def children(self):
        return self.items


@dataclass(frozen=True)
class FunApp(Term):
    fn: str
    args: tuple[Term, ...]
    type: Optional[Type] = _tfield()

    def children(self):
        return self.args


@dataclass(frozen=True)
class PropConst(Term):
    name: str
    type: Optional[Type] = _tfield()


@dataclass(frozen=True)
class Bottom(Term):
    type: Optional[Type] = _tfield()


@dataclass(frozen=True)
class Top(Term):
    type: Optional[Type] = _tfield()


@dataclass(frozen=True)
class PredApp(Term):
    pred: str
    args: tuple[Term, ...]
    type: Optional[Type] = _tfield()

    def children(self):
        return self.args


@dataclass(frozen=True)
class Not(Term):
    body: Term
    type: Optional[Type] = _tfield()

    def children(self):
        return (self.body,)


@dataclass(frozen=True)
class _Binary(Term):
    left: Term
    right: Term
    type: Optional[Type] = _tfield()

    def children(self):
        return (self.left, self.right)


class And(_Binary):
    pass


class Or(_Binary):
    pass


class Implies(_Binary):
    pass


class Iff(_Binary):
    pass


@dataclass(frozen=True)
class _Binder(Term):
    var: str
    sort: str
    body: Term
    type: Optional[Type] = _tfield()

    def children(self):
        return (self.body,)


class Forall(_Binder):
    pass


class Exists(_Binder):
    pass


class Mean(_Binder):
    pass


class Lambda(_Binder):
    pass


BINARY = (And, Or, Implies, Iff)
QUANTIFIERS = (Forall, Exists, Mean)
BINDERS = (Forall, Exists, Mean, Lambda)


def subterms(term: Term) -> Iterator[Term]:
    """Pre-order traversal."""
    stack = [term]
    while stack:
        t = stack.pop()
        yield t
        stack.extend(reversed(t.children()))


def term_size(term: Term) -> int:
    return sum(1 for _ in subterms(term))


def free_vars(term: Term) -> set[str]:
    if isinstance(term, Var):
        return {term.name}
    if isinstance(term, _Binder):
        return free_vars(term.body) - {term.var}
    out: set[str] = set()
    for c in term.children():
        out |= free_vars(c)
    return out


def map_children(term: Term, fn) -> Term:
    if isinstance(term, (Tuple,)):
        return replace(term, items=tuple(fn(c) for c in term.items))
    if isinstance(term, (FunApp, PredApp)):
        return replace(term, args=tuple(fn(c) for c in term.args))
    if isinstance(term, Not):
        return replace(term, body=fn(term.body))
    if isinstance(term, _Binary):
        return replace(term, left=fn(term.left), right=fn(term.right))
    if isinstance(term, _Binder):
        return replace(term, body=fn(term.body))
    return term


def _canonical(term: Term, env: dict[str, int], depth: int):
    # nameless form: bound variables become binder depths
    if isinstance(term, Var):
        return ("bvar", depth - env[term.name]) if term.name in env else ("fvar", term.name)
    if isinstance(term, _Binder):
        inner = dict(env)
        inner[term.var] = depth
        return (type(term).__name__, term.sort, _canonical(term.body, inner, depth + 1))
    head: tuple = (type(term).__name__,)
    for attr in ("name", "fn", "pred"):
        if hasattr(term, attr):
            head += (getattr(term, attr),)
    return head + tuple(_canonical(c, env, depth) for c in term.children())


def alpha_equal(a: Term, b: Term) -> bool:
    """Equality modulo renaming of bound variables."""
    return _canonical(a, {}, 0) == _canonical(b, {}, 0)


def alpha_key(term: Term):
    return _canonical(term, {}, 0)


def strip_types(term: Term) -> Term:
    term = map_children(term, strip_types)
    return replace(term, type=None)


# ---------------------------------------------------------------------------
# Theories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Axiom:
    lower: float
    formula: Term
    upper: float
    weight: Optional[float] = None  # None means flexible
    name: Optional[str] = None

    def __post_init__(self):
        if not (0.0 <= self.lower <= 1.0 and 0.0 <= self.upper <= 1.0):
            raise ValueError("axiom interval bounds must lie in [0, 1]")
        if self.lower > self.upper:
            raise ValueError(f"interval lower exceeds upper: [{self.lower}, {self.upper}]")
        if self.weight is not None and not self.weight > 0:
            raise ValueError("fixed axiom weight must be positive")
        fv = free_vars(self.formula)
        if fv:
            raise ValueError(f"axiom formula is not closed, free variables {sorted(fv)}")

    @property
    def flexible(self) -> bool:
        return self.weight is None

    @property
    def constrained(self) -> bool:
        return self.lower > 0.0 or self.upper < 1.0


@dataclass(frozen=True)
class Theory:
    axioms: tuple[Axiom, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "axioms", tuple(self.axioms))
        seen = {}
        for i, ax in enumerate(self.axioms):
            key = alpha_key(ax.formula)
            if key in seen:
                raise ValueError(f"duplicate axiom #{i} (same formula as axiom #{seen[key]})")
            seen[key] = i

    def __len__(self):
        return len(self.axioms)

    def __iter__(self):
        return iter(self.axioms)


# ---------------------------------------------------------------------------
# Well-formedness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TypeError_:
    kind: str  # UnknownSymbol, ArityMismatch, TypeMismatch, UnboundVariable, SortTypeMismatch, ...
    message: str
    term: Optional[Term] = None

    def __str__(self):
        return f"{self.kind}: {self.message}"


class WellFormednessError(Exception):
    """Raised with every problem found in a term, not only the first."""

    def __init__(self, errors: list[TypeError_]):
        self.errors = list(errors)
        super().__init__("; ".join(str(e) for e in self.errors))

    @property
    def kinds(self) -> list[str]:
        return [e.kind for e in self.errors]


class _Checker:
    def __init__(self, sig: Signature, free_types: Optional[dict[str, Prod]] = None):
        self.sig = sig
        self.errors: list[TypeError_] = []
        # types inferred for free variables from their argument positions
        self.free_types: dict[str, Prod] = dict(free_types or {})

    def err(self, kind, msg, term=None):
        self.errors.append(TypeError_(kind, msg, term))

    def check_args(self, args, expected: tuple[str, ...], env, owner: Term, symbol: str):
        typed = []
        got: list[str] = []
        for a in args:
            ta = self.check(a, env)
            typed.append(ta)
            if isinstance(ta.type, Prod):
                got.extend(ta.type.components)
            elif ta.type is not None:
                self.err("TypeMismatch", f"argument of {symbol} must be a proper term, got {ta.type}", a)
                got.append("?")
            else:
                got.append("?")
        if len(got) != len(expected):
            self.err(
                "ArityMismatch",
                f"{symbol} expects {len(expected)} argument component(s) ({' '.join(expected)}), got {len(got)}",
                owner,
            )
        elif "?" not in got and tuple(got) != tuple(expected):
            self.err(
                "TypeMismatch",
                f"{symbol} expects arguments of type {' '.join(expected)}, got {' '.join(got)}",
                owner,
            )
        return tuple(typed)

    def _var_type(self, name, env) -> Optional[Prod]:
        if name in env:
            return env[name]
        if name in self.sig.variables:
            return Prod(self.sig.variables[name])
        return self.free_types.get(name)

    def check(self, t: Term, env: dict[str, Prod]) -> Term:
        sig = self.sig
        if isinstance(t, Var):
            ty = self._var_type(t.name, env)
            if ty is None:
                kind = sig.kind_of(t.name)
                if kind is not None:
                    self.err("TypeMismatch", f"{t.name!r} is a {kind}, not a variable", t)
                else:
                    self.err("UnboundVariable", f"cannot determine the type of variable {t.name!r}", t)
            return replace(t, type=ty)
        if isinstance(t, Const):
            if t.name not in sig.constants:
                self.err("UnknownSymbol", f"unknown constant {t.name!r}", t)
                return t
            return replace(t, type=Prod((sig.constants[t.name],)))
        if isinstance(t, Tuple):
            items = tuple(self.check(c, env) for c in t.items)
            comps: list[str] = []
            for c in items:
                if isinstance(c.type, Prod) and len(c.type.components) == 1:
                    comps.extend(c.type.components)
                elif c.type is not None:
                    self.err("TypeMismatch", f"tuple components must have data types, got {c.type}", c)
            return replace(t, items=items, type=Prod(tuple(comps)))
        if isinstance(t, FunApp):
            if t.fn not in sig.functions:
                self.err("UnknownSymbol", f"unknown function {t.fn!r}", t)
                return replace(t, args=tuple(self.check(a, env) for a in t.args))
            dom, cod = sig.functions[t.fn]
            args = self.check_args(t.args, dom, env, t, t.fn)
            return replace(t, args=args, type=Prod((cod,)))
        if isinstance(t, PropConst):
            if t.name not in sig.propositions:
                self.err("UnknownSymbol", f"unknown propositional constant {t.name!r}", t)
            return replace(t, type=PROP)
        if isinstance(t, (Top, Bottom)):
            return replace(t, type=PROP)
        if isinstance(t, PredApp):
            if t.pred not in sig.predicates:
                self.err("UnknownSymbol", f"unknown predicate {t.pred!r}", t)
                return replace(t, args=tuple(self.check(a, env) for a in t.args), type=PROP)
            args = self.check_args(t.args, sig.predicates[t.pred], env, t, t.pred)
            return replace(t, args=args, type=PROP)
        if isinstance(t, Not):
            body = self.check(t.body, env)
            self._want_prop(body)
            return replace(t, body=body, type=PROP)
        if isinstance(t, _Binary):
            left = self.check(t.left, env)
            right = self.check(t.right, env)
            self._want_prop(left)
            self._want_prop(right)
            return replace(t, left=left, right=right, type=PROP)
        if isinstance(t, _Binder):
            if t.sort not in sig.sorts:
                self.err("UnknownSymbol", f"unknown sort {t.sort!r}", t)
                stype = None
            else:
                stype = Prod(sig.sorts[t.sort])
            if stype is not None and t.var in sig.variables and Prod(sig.variables[t.var]) != stype:
                self.err(
                    "SortTypeMismatch",
                    f"variable {t.var!r} has type {Prod(sig.variables[t.var])} but sort {t.sort!r} has type {stype}",
                    t,
                )
            if sig.kind_of(t.var) not in (None, "variable"):
                self.err("TypeMismatch", f"binder name {t.var!r} clashes with a {sig.kind_of(t.var)}", t)
            inner = dict(env)
            if stype is not None:
                inner[t.var] = stype
            else:
                inner[t.var] = Prod(("?",))
            saved = self.free_types.pop(t.var, None)
            body = self.check(t.body, inner)
            if saved is not None:
                self.free_types[t.var] = saved
            if isinstance(t, Lambda):
                ty = Arrow(stype, body.type) if stype is not None and body.type is not None else None
                return replace(t, body=body, type=ty)
            self._want_prop(body)
            return replace(t, body=body, type=PROP)
        raise TypeError(f"not a term: {t!r}")

    def _want_prop(self, t: Term):
        if t.type is not None and t.type != PROP:
            self.err("TypeMismatch", f"expected a formula (Prop), got a term of type {t.type}", t)


def _prepass_free_types(term: Term, sig: Signature, bound: frozenset, out: dict):
    """Infer types of free variables from the argument positions they occupy."""
    if isinstance(term, _Binder):
        _prepass_free_types(term.body, sig, bound | {term.var}, out)
        return
    if isinstance(term, (FunApp, PredApp)):
        if isinstance(term, FunApp):
            dom = sig.functions.get(term.fn, (None, None))[0]
        else:
            dom = sig.predicates.get(term.pred)
        if dom is not None:
            if len(term.args) == 1 and isinstance(term.args[0], Var):
                v = term.args[0].name
                if v not in bound and v not in sig.variables:
                    out.setdefault(v, Prod(tuple(dom)))
            elif len(term.args) == len(dom):
                for a, t in zip(term.args, dom):
                    if isinstance(a, Var) and a.name not in bound and a.name not in sig.variables:
                        out.setdefault(a.name, Prod((t,)))
    for c in term.children():
        _prepass_free_types(c, sig, bound, out)


def infer_free_var_types(term: Term, sig: Signature) -> dict[str, Prod]:
    out: dict[str, Prod] = {}
    _prepass_free_types(term, sig, frozenset(), out)
    for name in free_vars(term):
        if name in sig.variables:
            out[name] = Prod(sig.variables[name])
    return out


def check_well_formed(term: Term, sig: Signature) -> Term:
    """Return ``term`` with every node typed, or raise :class:`WellFormednessError`.

    Free variables not declared in the signature get the type of the argument
    slot they fill; a free variable whose type cannot be determined is an
    ``UnboundVariable`` error.
    """
    checker = _Checker(sig)
    checker.free_types = infer_free_var_types(term, sig)
    typed = checker.check(term, {})
    if checker.errors:
        raise WellFormednessError(checker.errors)
    return typed


def free_var_types(term: Term) -> dict[str, Prod]:
    """Types of free variables in an already-checked term."""
    out: dict[str, Prod] = {}

    def walk(t: Term, bound: frozenset):
        if isinstance(t, Var) and t.name not in bound and isinstance(t.type, Prod):
            out.setdefault(t.name, t.type)
        if isinstance(t, _Binder):
            walk(t.body, bound | {t.var})
            return
        for c in t.children():
            walk(c, bound)

    walk(term, frozenset())
    return out


def contains(term: Term, cls) -> bool:
    return any(isinstance(t, cls) for t in subterms(term))
