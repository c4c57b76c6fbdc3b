"""Compilation of terms to computation graphs and their evaluation.

A compiled graph is a post-order node list.  Evaluation is tensorized: every
node value carries a sorted tuple of *axes*, one per bound variable it depends
on, so a quantifier body is computed once for the whole batch and the
quantifier node reduces one axis.  Values are :class:`~palo.autodiff.Tensor`
objects, so gradients are available for the differentiable modes.

Modes: ``APPROX``, ``BOUNDS`` (lower, approx, upper), ``crisp(tau)``,
``curriculum(k)`` (existential quantifier as a power mean of order ``k``) and
``ABSTRACT`` (exact Boolean semantics on explicit finite interpretations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .grounding import ParamStore
from .logic import (
    And,
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
    Prod,
    PropConst,
    Signature,
    Term,
    Top,
    Tuple,
    Var,
    check_well_formed,
    contains,
    free_var_types,
)

EPS = 1e-7


class UnboundSort(KeyError):
    pass


class UnboundVariable(KeyError):
    pass


class NonDifferentiableMode(ValueError):
    pass


class MeanQuantifierNotSupported(ValueError):
    pass


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SemanticsMode:
    kind: str
    tau: float = 0.5
    exists_exponent: float = math.inf

    def __post_init__(self):
        if self.kind not in ("approx", "bounds", "abstract", "crisp", "curriculum"):
            raise ValueError(f"unknown semantics {self.kind!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("crisp threshold must lie in [0, 1]")
        if not self.exists_exponent >= 1.0:
            raise ValueError("existential exponent must be >= 1")

    @property
    def differentiable(self) -> bool:
        return self.kind in ("approx", "bounds", "curriculum")

    def __str__(self):
        if self.kind == "crisp":
            return f"crisp({self.tau:g})"
        if self.kind == "curriculum":
            return f"curriculum({self.exists_exponent:g})"
        return self.kind


APPROX = SemanticsMode("approx")
BOUNDS = SemanticsMode("bounds")
ABSTRACT = SemanticsMode("abstract")


def crisp(tau: float = 0.5) -> SemanticsMode:
    return SemanticsMode("crisp", tau=tau)


def curriculum(exponent: float) -> SemanticsMode:
    return SemanticsMode("curriculum", exists_exponent=exponent)


def parse_mode(text: str, tau: float = 0.5) -> SemanticsMode:
    text = text.strip().lower()
    if text in ("approx", "a"):
        return APPROX
    if text in ("bounds", "triple", "frechet"):
        return BOUNDS
    if text in ("abstract", "classical"):
        return ABSTRACT
    if text.startswith("crisp"):
        if "(" in text:
            tau = float(text[text.index("(") + 1 : text.rindex(")")])
        return crisp(tau)
    if text.startswith("curriculum"):
        k = float(text[text.index("(") + 1 : text.rindex(")")]) if "(" in text else math.inf
        return curriculum(k)
    raise ValueError(f"unknown semantics mode {text!r}")


@dataclass(frozen=True)
class TruthTriple:
    lower: float
    approx: float
    upper: float

    def __iter__(self):
        return iter((self.lower, self.approx, self.upper))


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GNode:
    op: str
    children: tuple[int, ...] = ()
    symbol: Optional[str] = None
    slot: Optional[int] = None
    sort: Optional[str] = None


@dataclass(frozen=True)
class CompiledGraph:
    nodes: tuple[GNode, ...]
    root: int
    free: dict[str, int]  # free variable -> slot
    free_types: dict[str, Prod]
    slot_sorts: dict[int, str]  # binder slot -> sort
    slot_types: dict[int, tuple[str, ...]]
    sig: Signature
    term: Term
    is_formula: bool

    def __len__(self):
        return len(self.nodes)

    @property
    def has_mean(self) -> bool:
        return any(n.op == "mean" for n in self.nodes)

    def lambda_slots(self) -> list[int]:
        """Slots of the leading tensor abstractions, outermost first."""
        out = []
        i = self.root
        while self.nodes[i].op == "lambda":
            out.append(self.nodes[i].slot)
            i = self.nodes[i].children[0]
        return out


_OPS = {
    Not: "not",
    And: "and",
    Or: "or",
    Implies: "implies",
    Iff: "iff",
    Forall: "forall",
    Exists: "exists",
    Mean: "mean",
    Lambda: "lambda",
}


def compile(term: Term, sig: Signature, checked: bool = False) -> CompiledGraph:
    """Compile a well-formed term; mode is chosen at evaluation time."""
    if not checked:
        term = check_well_formed(term, sig)
    ftypes = free_var_types(term)
    free = {name: i for i, name in enumerate(sorted(ftypes))}
    slot_types: dict[int, tuple[str, ...]] = {s: ftypes[n].components for n, s in free.items()}
    slot_sorts: dict[int, str] = {}
    nodes: list[GNode] = []
    counter = [len(free)]

    def visit(t: Term, env: dict[str, int]) -> int:
        if isinstance(t, Var):
            slot = env[t.name] if t.name in env else free[t.name]
            node = GNode("var", slot=slot)
        elif isinstance(t, Const):
            node = GNode("const", symbol=t.name)
        elif isinstance(t, Tuple):
            node = GNode("tuple", tuple(visit(c, env) for c in t.items))
        elif isinstance(t, FunApp):
            node = GNode("fun", tuple(visit(c, env) for c in t.args), symbol=t.fn)
        elif isinstance(t, PredApp):
            node = GNode("pred", tuple(visit(c, env) for c in t.args), symbol=t.pred)
        elif isinstance(t, PropConst):
            node = GNode("prop", symbol=t.name)
        elif isinstance(t, Top):
            node = GNode("top")
        elif isinstance(t, Bottom):
            node = GNode("bottom")
        elif isinstance(t, Not):
            node = GNode("not", (visit(t.body, env),))
        elif isinstance(t, (And, Or, Implies, Iff)):
            node = GNode(_OPS[type(t)], (visit(t.left, env), visit(t.right, env)))
        elif isinstance(t, (Forall, Exists, Mean, Lambda)):
            slot = counter[0]
            counter[0] += 1
            slot_sorts[slot] = t.sort
            slot_types[slot] = sig.sorts[t.sort]
            inner = dict(env)
            inner[t.var] = slot
            node = GNode(_OPS[type(t)], (visit(t.body, inner),), slot=slot, sort=t.sort)
        else:
            raise TypeError(f"cannot compile {t!r}")
        nodes.append(node)
        return len(nodes) - 1

    root = visit(term, {})
    body = term
    while isinstance(body, Lambda):
        body = body.body
    is_formula = not isinstance(body.type, Prod)
    return CompiledGraph(tuple(nodes), root, free, dict(ftypes), slot_sorts, slot_types, sig, term, is_formula)


# ---------------------------------------------------------------------------
# interpretations
# ---------------------------------------------------------------------------


@dataclass
class Comp:
    """One data-type component of a proper-term value."""

    axes: tuple[int, ...]
    t: Tensor
    origin: Optional[tuple[str, int, int]] = None  # (sort, component index, slot)


def _expand(t: Tensor, axes: tuple[int, ...], target: tuple[int, ...], sizes: Mapping[int, int], trailing: int = 0,
            full: bool = False) -> Tensor:
    """Insert singleton dims so ``t`` (over sorted ``axes``) lines up with ``target``."""
    if axes == target and not full:
        return t
    lead = tuple(sizes[a] if a in axes else 1 for a in target)
    tail = t.shape[len(axes):] if trailing else ()
    out = ad.reshape(t, lead + tail)
    if full:
        out = ad.broadcast_to(out, tuple(sizes[a] for a in target) + tail)
    return out


def _union(*axes_list) -> tuple[int, ...]:
    out: set[int] = set()
    for a in axes_list:
        out.update(a)
    return tuple(sorted(out))


class ParamInterpretation:
    """The algebra A(theta) defined by a :class:`ParamStore`."""

    vector = True

    def __init__(self, sig: Signature, params: ParamStore, requires_grad: bool = False):
        self.sig = sig
        self.params = params
        self.leaves = {k: Tensor(v, requires_grad=requires_grad) for k, v in params.items()}

    def split(self, types: tuple[str, ...], elements: np.ndarray) -> list[np.ndarray]:
        dims = [self.sig.dim[t] for t in types]
        if elements.shape[-1] != sum(dims):
            raise ValueError(f"elements have width {elements.shape[-1]}, expected {sum(dims)} for {' '.join(types)}")
        cuts = np.cumsum(dims)[:-1]
        return np.split(elements, cuts, axis=-1)

    def constant(self, name: str) -> list[Comp]:
        return [Comp((), self.leaves[f"const:{name}"])]

    def _stack(self, comps: Sequence[Comp], sizes) -> tuple[tuple[int, ...], Tensor]:
        axes = _union(*(c.axes for c in comps))
        parts = [_expand(c.t, c.axes, axes, sizes, trailing=1, full=True) for c in comps]
        return axes, ad.concat(parts, axis=-1)

    def function(self, name: str, comps: Sequence[Comp], ctx: "EvalContext") -> list[Comp]:
        axes, x = self._stack(comps, ctx.sizes)
        return [Comp(axes, ad.affine(x, self.leaves[f"fun:{name}:V"], self.leaves[f"fun:{name}:b"]))]

    def proposition(self, name: str) -> Tensor:
        return ad.sigmoid(self.leaves[f"prop:{name}"])

    def predicate(self, name: str, comps: Sequence[Comp], ctx: "EvalContext") -> tuple[tuple[int, ...], Tensor]:
        W, V, b, U = (self.leaves[f"pred:{name}:{k}"] for k in "WVbU")
        if all(c.origin is not None for c in comps):
            order: list[int] = []
            for c in comps:
                if c.origin[2] not in order:
                    order.append(c.origin[2])
            key = (name,) + tuple((c.origin[0], c.origin[1], order.index(c.origin[2])) for c in comps)
            table = ctx.cache.get(key)
            if table is None:
                sizes = tuple(ctx.sizes[s] for s in order)
                parts = []
                for c in comps:
                    pos = order.index(c.origin[2])
                    arr = c.t.value  # (n, d), data only
                    shape = [1] * len(order) + [arr.shape[-1]]
                    shape[pos] = arr.shape[0]
                    parts.append(np.broadcast_to(arr.reshape(shape), sizes + (arr.shape[-1],)))
                x = Tensor(np.concatenate(parts, axis=-1))
                table = ad.ntn(x, W, V, b, U)
                ctx.cache[key] = table
            perm = sorted(range(len(order)), key=lambda i: order[i])
            return tuple(sorted(order)), ad.transpose(table, perm)
        axes, x = self._stack(comps, ctx.sizes)
        return axes, ad.ntn(x, W, V, b, U)


class TableInterpretation:
    """Explicit finite interpretation.

    Carriers are integer ids.  ``predicates`` maps a predicate to an array
    indexed by argument ids holding truth values in [0, 1]; ``functions`` maps
    a function to an integer array of result ids; ``constants`` to an id;
    ``propositions`` to a truth value, or to a triple (lower, approx, upper)
    for an atom known only up to bounds.  Sort elements are rows of ids.
    """

    vector = False

    def __init__(self, predicates=None, functions=None, constants=None, propositions=None):
        self.predicates = {k: np.asarray(v, dtype=np.float64) for k, v in (predicates or {}).items()}
        self.functions = {k: np.asarray(v, dtype=np.int64) for k, v in (functions or {}).items()}
        self.constants = dict(constants or {})
        self.propositions = dict(propositions or {})

    def split(self, types, elements: np.ndarray) -> list[np.ndarray]:
        elements = np.asarray(elements)
        if elements.ndim == 1:
            elements = elements[:, None] if elements.shape and len(types) > 1 else elements.reshape(-1, 1)
        return [elements[..., i].astype(np.float64) for i in range(len(types))]

    def constant(self, name: str) -> list[Comp]:
        return [Comp((), Tensor(float(self.constants[name])))]

    def _ids(self, comps, sizes):
        axes = _union(*(c.axes for c in comps))
        ids = [_expand(c.t, c.axes, axes, sizes).value.astype(np.int64) for c in comps]
        return axes, tuple(ids)

    def function(self, name, comps, ctx) -> list[Comp]:
        axes, ids = self._ids(comps, ctx.sizes)
        return [Comp(axes, Tensor(self.functions[name][ids].astype(np.float64)))]

    def _triple(self, name) -> tuple[float, float, float]:
        v = self.propositions[name]
        if np.ndim(v) == 0:
            return float(v), float(v), float(v)
        l, a, u = (float(x) for x in v)
        if not 0.0 <= l <= a <= u <= 1.0:
            raise ValueError(f"proposition {name!r} needs 0 <= lower <= approx <= upper <= 1, got {v}")
        return l, a, u

    def proposition(self, name) -> Tensor:
        return Tensor(self._triple(name)[1])

    def proposition_bounds(self, name) -> tuple:
        return tuple(Tensor(x) for x in self._triple(name))

    def predicate(self, name, comps, ctx):
        axes, ids = self._ids(comps, ctx.sizes)
        out = self.predicates[name][ids]
        if out.ndim < len(axes):
            out = np.broadcast_to(out, tuple(ctx.sizes[a] for a in axes))
        full = np.broadcast_to(out, tuple(ctx.sizes[a] for a in axes)) if axes else out
        return axes, Tensor(np.array(full, dtype=np.float64))


def as_interpretation(model, sig: Signature, requires_grad: bool = False):
    if isinstance(model, (ParamInterpretation, TableInterpretation)):
        return model
    params = getattr(model, "params", model)
    if isinstance(params, ParamStore):
        return ParamInterpretation(sig, params, requires_grad)
    raise TypeError(f"cannot interpret {type(model).__name__} as an algebra")


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalContext:
    graph: CompiledGraph
    interp: Any
    binding: Any
    beta: Mapping[str, Any]
    axis_vars: Mapping[str, str]  # free variable -> sort, evaluated exhaustively as an axis
    mode: SemanticsMode
    sizes: dict[int, int] = field(default_factory=dict)
    elements: dict[int, list] = field(default_factory=dict)
    cache: dict = field(default_factory=dict)


@dataclass
class Result:
    """Value of a graph: tensor(s) over the free/lambda axes."""

    axes: tuple[int, ...]
    parts: tuple  # one Tensor (or three for bounds); for proper terms, the components
    is_formula: bool

    def numpy(self):
        vals = [p.value for p in self.parts]
        if self.is_formula:
            return vals[0] if len(vals) == 1 else tuple(vals)
        if vals[0].ndim > len(self.axes):
            return np.concatenate(vals, axis=-1)
        return np.stack(vals, axis=-1)


def _sort_rows(ctx: EvalContext, sort: str) -> np.ndarray:
    try:
        return np.asarray(ctx.binding[sort])
    except KeyError:
        raise UnboundSort(f"sort {sort!r} is not bound") from None


def _prepare_slots(ctx: EvalContext):
    g = ctx.graph
    for slot, sort in g.slot_sorts.items():
        rows = _sort_rows(ctx, sort)
        ctx.sizes[slot] = len(rows)
        ctx.elements[slot] = ctx.interp.split(g.slot_types[slot], rows)
    for name, slot in g.free.items():
        if name in ctx.axis_vars:
            rows = _sort_rows(ctx, ctx.axis_vars[name])
            ctx.sizes[slot] = len(rows)
            ctx.elements[slot] = ctx.interp.split(g.slot_types[slot], rows)
        elif name not in ctx.beta:
            raise UnboundVariable(f"free variable {name!r} is not bound")


def _var_value(ctx: EvalContext, slot: int) -> list[Comp]:
    if slot in ctx.elements:
        origin_sort = ctx.graph.slot_sorts.get(slot)
        if origin_sort is None:
            name = next(n for n, s in ctx.graph.free.items() if s == slot)
            origin_sort = ctx.axis_vars[name]
        return [Comp((slot,), Tensor(arr), (origin_sort, i, slot)) for i, arr in enumerate(ctx.elements[slot])]
    name = next(n for n, s in ctx.graph.free.items() if s == slot)
    value = np.asarray(ctx.beta[name], dtype=np.float64)
    parts = ctx.interp.split(ctx.graph.slot_types[slot], value[None, ...] if value.ndim else value.reshape(1, 1))
    return [Comp((), Tensor(p[0])) for p in parts]


def _align(ctx, vals):
    """vals: list of (axes, parts) -> (axes, list of aligned parts tuples)."""
    axes = _union(*(a for a, _ in vals))
    out = []
    for a, parts in vals:
        out.append(tuple(_expand(p, a, axes, ctx.sizes) for p in parts))
    return axes, out


def _crisp(t: Tensor, tau: float) -> Tensor:
    return Tensor((t.value >= tau).astype(np.float64))


def _connective(op: str, mode: SemanticsMode, x: tuple, y: Optional[tuple]) -> tuple:
    if mode.kind == "bounds":
        if op == "not":
            l, a, u = x
            return (ad.sub(1.0, u), ad.sub(1.0, a), ad.sub(1.0, l))
        if op == "and":
            return _and_bounds(x, y)
        if op == "or":
            return _or_bounds(x, y)
        if op == "implies":
            return _or_bounds(_connective("not", mode, x, None), y)
        if op == "iff":
            nx = _connective("not", mode, x, None)
            ny = _connective("not", mode, y, None)
            p, q = _and_bounds(x, y), _and_bounds(nx, ny)
            return (ad.add(p[0], q[0]), _iff(x[1], y[1]), ad.minimum(ad.add(p[2], q[2]), 1.0))
    (a,) = x
    if op == "not":
        return (ad.sub(1.0, a),)
    (b,) = y
    if op == "and":
        return (ad.mul(a, b),)
    if op == "or":
        return (_or(a, b),)
    if op == "implies":
        return (ad.add(ad.sub(ad.mul(a, b), a), 1.0),)
    if op == "iff":
        return (_iff(a, b),)
    raise ValueError(op)


def _or(a, b):
    # De Morgan: not (not a and not b)
    return ad.sub(1.0, ad.mul(ad.sub(1.0, a), ad.sub(1.0, b)))


def _iff(a, b):
    return ad.add(ad.sub(ad.sub(1.0, a), b), ad.mul(ad.mul(a, b), 2.0))


def _and_bounds(x, y):
    (l1, a1, u1), (l2, a2, u2) = x, y
    return (ad.maximum(0.0, ad.sub(ad.add(l1, l2), 1.0)), ad.mul(a1, a2), ad.minimum(u1, u2))


def _or_bounds(x, y):
    (l1, a1, u1), (l2, a2, u2) = x, y
    return (ad.maximum(l1, l2), _or(a1, a2), ad.minimum(1.0, ad.add(u1, u2)))


def _reduce(op: str, mode: SemanticsMode, t: Tensor, axis: int) -> Tensor:
    if op == "forall":
        if mode.kind == "crisp":
            return Tensor(t.value.min(axis=axis))
        return ad.geometric_mean(t, axis, EPS)
    if op == "exists":
        if mode.kind == "curriculum" and math.isfinite(mode.exists_exponent):
            return ad.power_mean(t, axis, mode.exists_exponent)
        return ad.max_(t, axis)
    if op == "mean":
        return ad.mean(t, axis)
    raise ValueError(op)


def _run(ctx: EvalContext) -> Result:
    g = ctx.graph
    mode = ctx.mode
    _prepare_slots(ctx)
    width = 3 if mode.kind == "bounds" else 1
    vals: list[Any] = [None] * len(g.nodes)
    for i, node in enumerate(g.nodes):
        op = node.op
        if op == "var":
            vals[i] = _var_value(ctx, node.slot)
        elif op == "const":
            vals[i] = ctx.interp.constant(node.symbol)
        elif op == "tuple":
            vals[i] = [c for ch in node.children for c in vals[ch]]
        elif op == "fun":
            comps = [c for ch in node.children for c in vals[ch]]
            vals[i] = ctx.interp.function(node.symbol, comps, ctx)
        else:
            if op == "pred":
                comps = [c for ch in node.children for c in vals[ch]]
                axes, t = ctx.interp.predicate(node.symbol, comps, ctx)
                parts = (t,) * width
            elif op == "prop":
                bounds = getattr(ctx.interp, "proposition_bounds", None)
                if width == 3 and bounds is not None:
                    axes, parts = (), bounds(node.symbol)
                else:
                    axes, parts = (), (ctx.interp.proposition(node.symbol),) * width
            elif op == "top":
                axes, parts = (), (Tensor(1.0),) * width
            elif op == "bottom":
                axes, parts = (), (Tensor(0.0),) * width
            elif op == "not":
                axes, x = vals[node.children[0]]
                parts = _connective("not", mode, x, None)
            elif op in ("and", "or", "implies", "iff"):
                axes, (x, y) = _align(ctx, [vals[node.children[0]], vals[node.children[1]]])
                parts = _connective(op, mode, x, y)
            elif op in ("forall", "exists", "mean"):
                axes, x = vals[node.children[0]]
                if node.slot in axes:
                    k = axes.index(node.slot)
                    parts = tuple(_reduce(op, mode, p, k) for p in x)
                    axes = axes[:k] + axes[k + 1 :]
                else:
                    parts = x
            elif op == "lambda":
                vals[i] = vals[node.children[0]]
                continue
            else:
                raise ValueError(op)
            if mode.kind == "crisp":
                parts = tuple(_crisp(p, mode.tau) for p in parts)
            elif mode.kind == "bounds":
                # the sandwich holds exactly in real arithmetic; clip rounding noise
                lo, a, hi = parts
                lo = ad.minimum(lo, hi)
                parts = (lo, ad.minimum(ad.maximum(a, lo), hi), hi)
            vals[i] = (axes, parts)
    root = vals[g.root]
    if g.is_formula:
        axes, parts = root
        return Result(axes, tuple(parts), True)
    comps = root
    axes = _union(*(c.axes for c in comps))
    parts = tuple(_expand(c.t, c.axes, axes, ctx.sizes, trailing=1 if ctx.interp.vector else 0, full=True) for c in comps)
    return Result(axes, parts, False)


def run_graph(g: CompiledGraph, model, binding, beta=None, mode: SemanticsMode = APPROX, axis_vars=None,
              requires_grad: bool = False, cache: Optional[dict] = None, interp=None) -> Result:
    if mode.kind == "abstract":
        raise ValueError("use eval_abstract_classical for the abstract classical semantics")
    interp = interp or as_interpretation(model, g.sig, requires_grad)
    ctx = EvalContext(g, interp, binding, beta or {}, axis_vars or {}, mode)
    if cache is not None:
        ctx.cache = cache
    if requires_grad and mode.differentiable:
        return _run(ctx)
    with ad.no_grad():
        return _run(ctx)


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def eval_approx(g: CompiledGraph, model, binding, beta=None):
    """Approximate probability of a formula (or value of a proper term)."""
    r = run_graph(g, model, binding, beta, APPROX)
    return _scalar(r.numpy())


def eval_bounds(g: CompiledGraph, model, binding, beta=None):
    r = run_graph(g, model, binding, beta, BOUNDS)
    l, a, u = (p.value for p in r.parts)
    if l.ndim == 0:
        return TruthTriple(float(l), float(a), float(u))
    return TruthTriple(l, a, u)


def eval_crisp(g: CompiledGraph, model, binding, beta=None, tau: float = 0.5):
    r = run_graph(g, model, binding, beta, crisp(tau))
    return _scalar(r.numpy())


def eval_mode(g: CompiledGraph, model, binding, beta=None, mode: SemanticsMode = APPROX, cache=None,
              interp=None) -> tuple[float, float, float]:
    """(lower, approx, upper) of a closed formula; l = a = u outside bounds mode."""
    if mode.kind == "abstract":
        v = float(eval_abstract_classical(g.term, model, binding, beta, sig=g.sig))
        return v, v, v
    r = run_graph(g, model, binding, beta, mode, cache=cache, interp=interp)
    vals = [float(p.value) for p in r.parts]
    if len(vals) == 1:
        return vals[0], vals[0], vals[0]
    return tuple(vals)


def backward(g: CompiledGraph, model, binding, beta=None, mode: SemanticsMode = APPROX,
             component: str = "approx") -> dict[str, np.ndarray]:
    """Gradient of the (scalar) output w.r.t. every parameter of ``model``.

    ``component`` picks lower/approx/upper in bounds mode.
    """
    if not mode.differentiable:
        raise NonDifferentiableMode(f"{mode} semantics has no gradients")
    sig = g.sig
    interp = as_interpretation(model, sig, requires_grad=True)
    if not isinstance(interp, ParamInterpretation):
        raise TypeError("gradients need a parameterized interpretation")
    r = run_graph(g, None, binding, beta, mode, requires_grad=True, interp=interp)
    idx = {"lower": 0, "approx": 1, "upper": 2}[component] if len(r.parts) == 3 else 0
    out = r.parts[idx]
    if out.value.size != 1:
        raise ValueError("backward needs a scalar output; bind all free variables")
    if out.requires_grad:
        out.backward()
    return {k: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)) for k, leaf in interp.leaves.items()}


# ---------------------------------------------------------------------------
# abstract classical semantics (direct Tarskian evaluation)
# ---------------------------------------------------------------------------


def eval_abstract_classical(term: Term, interp: TableInterpretation, binding, beta=None,
                            sig: Optional[Signature] = None) -> int:
    """Exact Boolean truth value over an explicit finite interpretation.

    Quantifiers range over the whole of ``binding[sort]`` (trivial batch
    cover).  Predicate tables must be Boolean; the mean quantifier is rejected.
    """
    if isinstance(term, CompiledGraph):
        term = term.term
    if contains(term, Mean):
        raise MeanQuantifierNotSupported("the abstract classical semantics excludes the mean quantifier")
    if not isinstance(interp, TableInterpretation):
        raise TypeError("abstract classical semantics needs an explicit finite (table) interpretation")

    def row(x):
        x = np.atleast_1d(np.asarray(x))
        return tuple(int(v) for v in x)

    def proper(t: Term, env) -> tuple:
        if isinstance(t, Var):
            if t.name not in env:
                raise UnboundVariable(f"free variable {t.name!r} is not bound")
            return env[t.name]
        if isinstance(t, Const):
            return (int(interp.constants[t.name]),)
        if isinstance(t, Tuple):
            return tuple(x for c in t.items for x in proper(c, env))
        if isinstance(t, FunApp):
            ids = tuple(x for c in t.args for x in proper(c, env))
            return (int(interp.functions[t.fn][ids]),)
        raise TypeError(f"not a proper term: {t!r}")

    def truth(t: Term, env) -> bool:
        if isinstance(t, Top):
            return True
        if isinstance(t, Bottom):
            return False
        if isinstance(t, PropConst):
            l, a, u = interp._triple(t.name)
            if l != u:
                raise ValueError(f"{t.name} has interval value [{l}, {u}] in a classical interpretation")
            return _boolean(a, t.name)
        if isinstance(t, PredApp):
            ids = tuple(x for c in t.args for x in proper(c, env))
            return _boolean(interp.predicates[t.pred][ids], t.pred)
        if isinstance(t, Not):
            return not truth(t.body, env)
        if isinstance(t, And):
            return truth(t.left, env) and truth(t.right, env)
        if isinstance(t, Or):
            return truth(t.left, env) or truth(t.right, env)
        if isinstance(t, Implies):
            return (not truth(t.left, env)) or truth(t.right, env)
        if isinstance(t, Iff):
            return truth(t.left, env) == truth(t.right, env)
        if isinstance(t, (Forall, Exists)):
            try:
                rows = np.asarray(binding[t.sort])
            except KeyError:
                raise UnboundSort(f"sort {t.sort!r} is not bound") from None
            results = (truth(t.body, {**env, t.var: row(r)}) for r in rows)
            return all(results) if isinstance(t, Forall) else any(results)
        raise TypeError(f"not a formula: {t!r}")

    env = {k: row(v) for k, v in (beta or {}).items()}
    return int(truth(term, env))


def _boolean(v, name) -> bool:
    v = float(v)
    if v not in (0.0, 1.0):
        raise ValueError(f"{name} has non-Boolean value {v} in a classical interpretation")
    return v == 1.0
