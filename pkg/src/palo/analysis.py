"""Model analysis: validation, exhaustive evaluation, histograms and relation export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .logic import Axiom, Exists, Forall, Mean, PredApp, Signature, Term, Theory, Var
from .sampling import BatchSpec, MeanEstimate, SortBinding, draw_sample_bindings, sample_values
from .semantics import APPROX, BOUNDS, CompiledGraph, SemanticsMode, as_interpretation, compile, crisp, run_graph

DEFAULT_CELL_CAP = 10_000_000
DEFAULT_BINS = 50


class CellCapExceeded(MemoryError):
    pass


class NonBinaryPredicate(ValueError):
    pass


def strip_quantifier(term: Term) -> Optional[Term]:
    """Replace a single top-level universal or existential quantifier by a mean quantifier."""
    if isinstance(term, (Forall, Exists)):
        return Mean(term.var, term.sort, term.body, type=term.type)
    return None


def _mode_label(mode: SemanticsMode) -> str:
    return str(mode)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class FormulaReport:
    name: str
    formula: str
    estimates: dict[str, MeanEstimate]
    stripped: dict[str, MeanEstimate] = field(default_factory=dict)
    weight: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    rank: int = 0

    @property
    def mean(self) -> float:
        est = self.estimates.get("approx") or next(iter(self.estimates.values()))
        return est.mean

    @property
    def in_interval(self) -> Optional[bool]:
        if self.lower is None:
            return None
        return self.lower <= self.mean <= self.upper

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "formula": self.formula,
            "rank": self.rank,
            "weight": self.weight,
            "interval": None if self.lower is None else [self.lower, self.upper],
            "in_interval": self.in_interval,
            "estimates": {k: v.as_dict() for k, v in self.estimates.items()},
            "stripped": {k: v.as_dict() for k, v in self.stripped.items()},
        }


@dataclass
class ValidationReport:
    rows: list[FormulaReport]
    modes: list[str]
    n_samples: int
    likelihood: Optional[float] = None  # strict likelihood, geometric-mean normalized

    def __getitem__(self, name: str) -> FormulaReport:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {
            "modes": self.modes,
            "n_samples": self.n_samples,
            "likelihood": self.likelihood,
            "formulas": [r.as_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2)

    def to_text(self) -> str:
        header = ["rank", "name", "weight"]
        for m in self.modes:
            header += [f"{m}", "ci95"] if m != "bounds" else ["lower", "approx", "upper", "ci95"]
        header += ["stripped"]
        lines = []
        for r in self.rows:
            cells = [str(r.rank), r.name, "-" if r.weight is None else f"{r.weight:.4f}"]
            for m in self.modes:
                e = r.estimates[m]
                if m == "bounds":
                    cells += [f"{e.lower_mean:.4f}", f"{e.mean:.4f}", f"{e.upper_mean:.4f}", f"{e.ci95:.4f}"]
                else:
                    cells += [f"{e.mean:.4f}", f"{e.ci95:.4f}"]
            s = r.stripped.get("approx") or r.stripped.get(self.modes[0])
            cells.append("-" if s is None else f"{s.mean:.4f}")
            lines.append(cells)
        out = _table(header, lines)
        if self.likelihood is not None:
            out += f"\nnormalized likelihood: {self.likelihood:.6f}\n"
        return out


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i]) for i in range(len(header))]
    fmt = lambda cells: "  ".join(c.rjust(w) if k else c.ljust(w) for k, (c, w) in enumerate(zip(cells, widths)))  # noqa: E731
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in rows]) + "\n"


def _as_items(formulas, names=None) -> list[tuple[str, Term, Optional[Axiom]]]:
    if isinstance(formulas, Theory):
        formulas = list(formulas.axioms)
    elif isinstance(formulas, (Term, Axiom)):
        formulas = [formulas]
    items = []
    for k, f in enumerate(formulas):
        ax = f if isinstance(f, Axiom) else None
        term = f.formula if ax is not None else f
        name = (names[k] if names else None) or (ax.name if ax is not None and ax.name else f"f{k + 1}")
        items.append((name, term, ax))
    return items


def validate(model, formulas, delta: SortBinding, spec: BatchSpec, sig: Signature,
             modes: Sequence[SemanticsMode] = (APPROX,), weights: Optional[Sequence[float]] = None,
             names: Optional[Sequence[str]] = None, bindings=None) -> ValidationReport:
    """Mean probabilities of closed formulas (or axioms) under each requested mode.

    All modes share one set of sample bindings.  A formula whose top node is a
    universal or existential quantifier is also reported with that quantifier
    replaced by a mean quantifier.
    """
    from .parser import pretty

    items = _as_items(formulas, names)
    modes = list(dict.fromkeys(modes)) or [APPROX]
    bindings = draw_sample_bindings(delta, spec) if bindings is None else bindings
    graphs, stripped = [], []
    for name, term, _ in items:
        g = compile(term, sig, checked=term.type is not None)
        if g.free:
            raise ValueError(f"formula {name!r} has free variables {sorted(g.free)}")
        graphs.append(g)
        s = strip_quantifier(g.term)
        stripped.append(None if s is None else compile(s, sig, checked=True))
    extra = [g for g in stripped if g is not None]
    rows = [FormulaReport(name, pretty(t), {}, {}) for name, t, _ in items]
    for mode in modes:
        vals = sample_values(graphs + extra, model, bindings, mode)
        label = _mode_label(mode)
        j = len(graphs)
        for k, row in enumerate(rows):
            row.estimates[label] = MeanEstimate.from_samples(vals[:, k, :])
            if stripped[k] is not None:
                row.stripped[label] = MeanEstimate.from_samples(vals[:, j, :])
                j += 1
    for k, (_, _, ax) in enumerate(items):
        if ax is not None:
            rows[k].lower, rows[k].upper = ax.lower, ax.upper
        if weights is not None:
            rows[k].weight = float(weights[k])
    for rank, row in enumerate(sorted(rows, key=lambda r: -r.mean), start=1):
        row.rank = rank
    likelihood = None
    if weights is not None and all(ax is not None for _, _, ax in items):
        from .synthesis import strict_likelihood

        _, likelihood = strict_likelihood(Theory([ax for _, _, ax in items]), [r.mean for r in rows], weights)
    return ValidationReport(rows, [_mode_label(m) for m in modes], len(bindings), likelihood)


# ---------------------------------------------------------------------------
# exhaustive evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvaluationTensor:
    """Values over the full Cartesian product of the free variables' sorts.

    Axes follow ``variables`` (free variables by name, then leading tensor
    abstractions); proper terms carry a trailing component axis.
    """

    variables: list[str]
    sorts: list[str]
    labels: list[list]
    values: np.ndarray
    is_formula: bool = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        vals = self.values
        comp = [] if self.is_formula else [f"v{k}" for k in range(vals.shape[-1])]
        w.writerow(list(self.variables) + (["value"] if self.is_formula else comp))
        grid = vals if self.is_formula else vals.reshape(vals.shape[: len(self.variables)] + (-1,))
        for idx in np.ndindex(*grid.shape[: len(self.variables)]):
            keys = [_label_text(self.labels[a][i]) for a, i in enumerate(idx)]
            cell = grid[idx]
            w.writerow(keys + ([repr(float(cell))] if self.is_formula else [repr(float(x)) for x in cell]))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _label_text(label) -> str:
    if isinstance(label, tuple):
        return "|".join(str(x) for x in label)
    return str(label)


def infer_sorts(g: CompiledGraph, sig: Signature, given: Optional[Mapping[str, str]] = None) -> dict[str, str]:
    """Sort for each free variable: given explicitly or the unique sort of its type."""
    given = dict(given or {})
    out = {}
    for v in sorted(g.free):
        if v in given:
            if given[v] not in sig.sorts:
                raise ValueError(f"unknown sort {given[v]!r} for variable {v!r}")
            out[v] = given[v]
            continue
        comps = g.free_types[v].components
        cands = sorted(s for s, t in sig.sorts.items() if tuple(t) == tuple(comps))
        if len(cands) != 1:
            raise ValueError(f"cannot infer a sort for free variable {v!r} of type {' '.join(comps)}; "
                             f"candidates {cands}; name one explicitly")
        out[v] = cands[0]
    return out


def evaluate(model, term, delta: SortBinding, sig: Signature, sorts: Optional[Mapping[str, str]] = None,
             mode: SemanticsMode = APPROX, cell_cap: int = DEFAULT_CELL_CAP) -> EvaluationTensor:
    """Exhaustive evaluation over every element of each free variable's sort."""
    g = term if isinstance(term, CompiledGraph) else compile(term, sig, checked=term.type is not None)
    var_sorts = infer_sorts(g, sig, sorts)
    variables = sorted(g.free)
    lam = g.lambda_slots()
    lam_names = _lambda_vars(g.term, len(lam))
    all_sorts = [var_sorts[v] for v in variables] + [g.slot_sorts[s] for s in lam]
    for s in all_sorts:
        if s not in delta:
            raise ValueError(f"sort {s!r} has no binding")
    cells = math.prod(len(delta[s]) for s in all_sorts)
    if cells > cell_cap:
        raise CellCapExceeded(f"evaluation needs {cells} cells, above the cap of {cell_cap}")
    if mode.kind == "bounds":
        raise ValueError("exhaustive evaluation reports a single value per cell; use approx or crisp")
    res = run_graph(g, model, delta, None, mode, axis_vars=var_sorts)
    values = np.asarray(res.numpy(), dtype=np.float64)
    return EvaluationTensor(variables + lam_names, all_sorts, [list(delta.labels[s]) for s in all_sorts], values,
                            g.is_formula)


def _lambda_vars(term: Term, count: int) -> list[str]:
    out = []
    for _ in range(count):
        out.append(term.var)
        term = term.body
    return out


# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def log_counts(self) -> np.ndarray:
        return np.log10(self.counts + 1.0)

    def rows(self) -> list[tuple[float, float, int, float]]:
        lc = self.log_counts
        return [(float(self.edges[k]), float(self.edges[k + 1]), int(self.counts[k]), float(lc[k]))
                for k in range(len(self.counts))]

    def to_csv(self, path=None, log_counts: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["bin_lo", "bin_hi", "count"] + (["log10_count_plus_1"] if log_counts else []))
        for lo, hi, c, lc in self.rows():
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", c] + ([f"{lc:.6f}"] if log_counts else []))
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def histogram(values, n_bins: int = DEFAULT_BINS) -> Histogram:
    """Equal-width bins over [0, 1]."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size and (v.min() < 0.0 or v.max() > 1.0 or not np.all(np.isfinite(v))):
        raise ValueError("histogram values must lie in [0, 1]")
    counts, edges = np.histogram(v, bins=n_bins, range=(0.0, 1.0))
    return Histogram(edges, counts)


# ---------------------------------------------------------------------------
# relation extraction
# ---------------------------------------------------------------------------


@dataclass
class EdgeList:
    edges: list[tuple]  # (source id, target id, probability)
    threshold: float
    nodes: list = field(default_factory=list)

    def __len__(self):
        return len(self.edges)

    def filter(self, threshold: float, drop_isolated: bool = False) -> "EdgeList":
        edges = [e for e in self.edges if e[2] >= threshold]
        nodes = _incident(edges) if drop_isolated else list(self.nodes)
        return EdgeList(edges, max(threshold, self.threshold), nodes)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["source", "target", "probability"])
        for s, t, p in self.edges:
            w.writerow([_label_text(s), _label_text(t), repr(float(p))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dot(self, path=None, name: str = "relation", annotation: Optional[Mapping] = None) -> str:
        """Directed graph; edge darkness grows with probability.

        ``annotation`` maps node ids to scalars in [-1, 1], shown as a blue/red fill.
        """
        lines = [f"digraph {_dot_id(name)} {{", "  node [shape=ellipse, style=filled, fillcolor=white];"]
        for n in self.nodes:
            attrs = [f"label={_dot_id(_label_text(n))}"]
            if annotation is not None and n in annotation:
                attrs.append(f'fillcolor="{_diverging(float(annotation[n]))}"')
            lines.append(f"  {_dot_id(_label_text(n))} [{', '.join(attrs)}];")
        for s, t, p in self.edges:
            lines.append(f'  {_dot_id(_label_text(s))} -> {_dot_id(_label_text(t))} '
                         f'[color="{_gray(p)}", penwidth={1.0 + 2.0 * p:.2f}, label="{p:.2f}"];')
        lines.append("}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _incident(edges) -> list:
    seen = {}
    for s, t, _ in edges:
        seen.setdefault(s, None)
        seen.setdefault(t, None)
    return list(seen)


def _dot_id(text: str) -> str:
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _gray(p: float) -> str:
    level = int(round(220 * (1.0 - min(max(p, 0.0), 1.0))))
    return f"#{level:02x}{level:02x}{level:02x}"


def _diverging(x: float) -> str:
    x = min(max(x, -1.0), 1.0)
    fade = int(round(255 * (1.0 - abs(x))))
    return f"#ff{fade:02x}{fade:02x}" if x > 0 else f"#{fade:02x}{fade:02x}ff"


def extract_relation(model, predicate, delta: Optional[SortBinding] = None, sig: Optional[Signature] = None,
                     threshold: float = 0.7, drop_isolated: bool = False, sort: Optional[str] = None) -> EdgeList:
    """Edges (a, b) with predicate probability at or above ``threshold``.

    ``predicate`` is a predicate name, or an :class:`EdgeList` to be re-thresholded.
    """
    if isinstance(predicate, EdgeList):
        return predicate.filter(threshold, drop_isolated)
    dom = sig.predicates.get(predicate)
    if dom is None:
        raise ValueError(f"unknown predicate {predicate!r}")
    if len(dom) != 2 or dom[0] != dom[1]:
        raise NonBinaryPredicate(f"predicate {predicate!r} of type {' '.join(dom)} is not a binary relation on one type")
    if sort is None:
        cands = sorted(s for s, t in sig.sorts.items() if tuple(t) == (dom[0],))
        if len(cands) != 1:
            raise ValueError(f"cannot choose a sort for {predicate!r}; candidates {cands}")
        sort = cands[0]
    term = PredApp(predicate, (Var("a"), Var("b")))
    tensor = evaluate(model, term, delta, sig, {"a": sort, "b": sort})
    labels = tensor.labels[0]
    vals = tensor.values
    edges = [(labels[i], labels[j], float(vals[i, j])) for i, j in zip(*np.nonzero(vals >= threshold))]
    nodes = _incident(edges) if drop_isolated else list(labels)
    return EdgeList(edges, threshold, nodes)


# ---------------------------------------------------------------------------
# soft vs crisp
# ---------------------------------------------------------------------------


@dataclass
class ComparisonRow:
    name: str
    soft: float
    crisp: float

    @property
    def delta(self) -> float:
        return abs(self.soft - self.crisp)


@dataclass
class SemanticsComparison:
    rows: list[ComparisonRow]
    tau: float
    stripped: bool = False

    @property
    def max_delta(self) -> float:
        return max((r.delta for r in self.rows), default=0.0)

    def as_dict(self) -> dict:
        return {"tau": self.tau, "stripped": self.stripped, "max_delta": self.max_delta,
                "rows": [{"name": r.name, "soft": r.soft, "crisp": r.crisp, "delta": r.delta} for r in self.rows]}

    def to_text(self) -> str:
        rows = [[r.name, f"{r.soft:.4f}", f"{r.crisp:.4f}", f"{r.delta:.4f}"] for r in self.rows]
        return _table(["name", "soft", f"crisp({self.tau:g})", "|delta|"], rows) + f"max |delta|: {self.max_delta:.4f}\n"


def compare_semantics(model, formulas, delta: SortBinding, spec: BatchSpec, sig: Signature, tau: float = 0.5,
                      names: Optional[Sequence[str]] = None, bindings=None, strip: bool = False) -> SemanticsComparison:
    """Paired soft and crisp mean probabilities over identical sample bindings.

    With ``strip`` a top-level universal or existential quantifier is replaced
    by a mean quantifier first, as in the validation reports.
    """
    items = _as_items(formulas, names)
    graphs = []
    for _, t, _ in items:
        g = compile(t, sig, checked=t.type is not None)
        s = strip_quantifier(g.term) if strip else None
        graphs.append(g if s is None else compile(s, sig, checked=True))
    bindings = draw_sample_bindings(delta, spec) if bindings is None else bindings
    soft = sample_values(graphs, model, bindings, APPROX)[:, :, 1].mean(axis=0)
    hard = sample_values(graphs, model, bindings, crisp(tau))[:, :, 1].mean(axis=0)
    rows = [ComparisonRow(name, float(s), float(c)) for (name, _, _), s, c in zip(items, soft, hard)]
    return SemanticsComparison(rows, tau, strip)


__all__ = [
    "BOUNDS",
    "CellCapExceeded",
    "ComparisonRow",
    "EdgeList",
    "EvaluationTensor",
    "FormulaReport",
    "Histogram",
    "NonBinaryPredicate",
    "SemanticsComparison",
    "ValidationReport",
    "as_interpretation",
    "compare_semantics",
    "evaluate",
    "extract_relation",
    "histogram",
    "infer_sorts",
    "strip_quantifier",
    "validate",
]
