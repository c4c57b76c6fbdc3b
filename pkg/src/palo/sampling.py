"""Sort bindings, random sample bindings and mean-probability estimates."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .logic import Axiom, Signature
from .semantics import APPROX, CompiledGraph, SemanticsMode, compile, eval_mode

DEFAULT_BATCH = 50
Z95 = 1.96


class BatchLargerThanSort(ValueError):
    pass


class DataError(ValueError):
    pass


def _dedup(values: np.ndarray, labels: list):
    _, first = np.unique(values, axis=0, return_index=True)
    keep = np.sort(first)
    return values[keep], [labels[i] for i in keep]


@dataclass
class SortBinding:
    """Finite data set per sort: rows of flattened element vectors.

    ``labels`` holds one identifier per row (a data id, or a tuple of ids for
    pair sorts built from index columns).  Duplicate rows are dropped on
    construction, keeping the first occurrence.
    """

    values: dict[str, np.ndarray] = field(default_factory=dict)
    labels: dict[str, list] = field(default_factory=dict)

    def __post_init__(self):
        for s in list(self.values):
            v = np.asarray(self.values[s], dtype=np.float64)
            if v.ndim == 1:
                v = v[:, None]
            if v.ndim != 2 or len(v) == 0:
                raise DataError(f"sort {s!r} needs a non-empty 2-d array of elements")
            labels = list(self.labels.get(s, range(len(v))))
            if len(labels) != len(v):
                raise DataError(f"sort {s!r} has {len(v)} rows but {len(labels)} labels")
            self.values[s], self.labels[s] = _dedup(v, labels)

    def __getitem__(self, sort: str) -> np.ndarray:
        return self.values[sort]

    def __contains__(self, sort: str) -> bool:
        return sort in self.values

    def sizes(self) -> dict[str, int]:
        return {s: len(v) for s, v in self.values.items()}

    def check(self, sig: Signature):
        for s, v in self.values.items():
            if s not in sig.sorts:
                raise DataError(f"binding for undeclared sort {s!r}")
            width = sig.width(sig.sorts[s])
            if v.shape[1] != width:
                raise DataError(f"sort {s!r} elements have width {v.shape[1]}, expected {width}")

    def subset(self, rows: Mapping[str, np.ndarray]) -> "SortBinding":
        out = SortBinding.__new__(SortBinding)
        out.values = {s: self.values[s][rows[s]] if s in rows else self.values[s] for s in self.values}
        out.labels = {s: [self.labels[s][i] for i in rows[s]] if s in rows else self.labels[s] for s in self.values}
        return out


@dataclass
class BatchSpec:
    batch: dict[str, int] = field(default_factory=dict)
    sample_size: int = 100
    seed: int = 0
    default_batch: int = DEFAULT_BATCH

    def __post_init__(self):
        if self.sample_size < 1:
            raise ValueError("sample size must be at least 1")
        for s, b in self.batch.items():
            if b < 1:
                raise ValueError(f"batch size for sort {s!r} must be positive, got {b}")

    def size_for(self, sort: str, available: int) -> int:
        if sort in self.batch:
            b = self.batch[sort]
            if b > available:
                raise BatchLargerThanSort(f"batch {b} for sort {sort!r} exceeds its {available} elements")
            return b
        return min(self.default_batch, available)


def draw_sample_bindings(delta: SortBinding, spec: BatchSpec, seed: Optional[int] = None) -> list[SortBinding]:
    """N sub-bindings, each a uniform random batch per sort (no replacement within a batch)."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    sizes = {s: spec.size_for(s, n) for s, n in sorted(delta.sizes().items())}
    out = []
    for _ in range(spec.sample_size):
        rows = {}
        for s, b in sizes.items():
            n = len(delta[s])
            rows[s] = np.arange(n) if b == n else np.sort(rng.choice(n, size=b, replace=False))
        out.append(delta.subset(rows))
    return out


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    lower_mean: float
    upper_mean: float
    ci95: float
    ci95_lower: float
    ci95_upper: float
    n_samples: int

    @staticmethod
    def from_samples(values: np.ndarray) -> "MeanEstimate":
        """``values``: array (N, 3) of (lower, approx, upper) per sample binding."""
        values = np.asarray(values, dtype=np.float64).reshape(-1, 3)
        n = len(values)
        means = values.mean(axis=0)
        if n > 1:
            half = Z95 * values.std(axis=0, ddof=1) / math.sqrt(n)
            # identical samples (e.g. a trivial cover) carry no sampling error
            half[np.ptp(values, axis=0) == 0] = 0.0
        else:
            half = np.zeros(3)
        return MeanEstimate(float(means[1]), float(means[0]), float(means[2]), float(half[1]), float(half[0]),
                            float(half[2]), n)

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "lower_mean": self.lower_mean,
            "upper_mean": self.upper_mean,
            "ci95": self.ci95,
            "ci95_lower": self.ci95_lower,
            "ci95_upper": self.ci95_upper,
            "n_samples": self.n_samples,
        }


def _graph(formula, sig: Optional[Signature]) -> CompiledGraph:
    if isinstance(formula, CompiledGraph):
        return formula
    if sig is None:
        raise ValueError("a signature is needed to compile a formula")
    return compile(formula, sig)


def sample_values(graphs: Sequence[CompiledGraph], model, bindings: Sequence[SortBinding],
                  mode: SemanticsMode = APPROX) -> np.ndarray:
    """Array (N, len(graphs), 3) of per-binding (lower, approx, upper) values.

    Predicate tables are shared between graphs within one binding.
    """
    from .semantics import as_interpretation

    out = np.zeros((len(bindings), len(graphs), 3))
    if not graphs:
        return out
    interp = None if mode.kind == "abstract" else as_interpretation(model, graphs[0].sig)
    for n, b in enumerate(bindings):
        cache: dict = {}
        for k, g in enumerate(graphs):
            out[n, k] = eval_mode(g, model, b, None, mode, cache=cache, interp=interp)
    return out


def mean_probability(formula, model, delta: SortBinding, spec: BatchSpec, mode: SemanticsMode = APPROX,
                     sig: Optional[Signature] = None, bindings: Optional[Sequence[SortBinding]] = None) -> MeanEstimate:
    g = _graph(formula, sig)
    if g.free:
        raise ValueError(f"formula has free variables {sorted(g.free)}")
    bindings = draw_sample_bindings(delta, spec) if bindings is None else bindings
    return MeanEstimate.from_samples(sample_values([g], model, bindings, mode)[:, 0, :])


def satisfies(model, axiom: Axiom, delta: SortBinding, spec: BatchSpec, sig: Signature,
              mode: SemanticsMode = APPROX, bindings=None) -> tuple[bool, MeanEstimate]:
    est = mean_probability(axiom.formula, model, delta, spec, mode, sig, bindings)
    return axiom.lower <= est.mean <= axiom.upper, est


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path} is empty")
    header = rows[0]
    try:
        [float(x) for x in header]
        header = [f"c{i}" for i in range(len(rows[0]))]
    except ValueError:
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path} has no data rows")
    return header, rows


def read_sort_csv(path) -> tuple[np.ndarray, list]:
    """Rows of coordinates; an ``id`` column, if present, supplies labels."""
    path = Path(path)
    header, rows = _read_csv(path)
    id_col = header.index("id") if "id" in header else None
    cols = [i for i in range(len(header)) if i != id_col]
    try:
        values = np.array([[float(r[i]) for i in cols] for r in rows])
    except (ValueError, IndexError) as e:
        raise DataError(f"{path}: malformed row ({e})") from None
    labels = [r[id_col] for r in rows] if id_col is not None else list(range(len(rows)))
    return values, labels


def read_index_csv(path, base_values: np.ndarray, base_labels: list) -> tuple[np.ndarray, list]:
    """Rows of integer indices into a base sort; elements are the concatenated base rows."""
    path = Path(path)
    _, rows = _read_csv(path)
    try:
        idx = np.array([[int(x) for x in r] for r in rows], dtype=np.int64)
    except ValueError as e:
        raise DataError(f"{path}: index columns must be integers ({e})") from None
    if idx.min() < 0 or idx.max() >= len(base_values):
        raise DataError(f"{path}: index out of range for a sort of {len(base_values)} elements")
    values = np.concatenate([base_values[idx[:, k]] for k in range(idx.shape[1])], axis=1)
    labels = [tuple(base_labels[i] for i in row) for row in idx]
    return values, labels


def load_binding(sort_data, base_dir=".", sig: Optional[Signature] = None,
                 extra: Optional[SortBinding] = None) -> SortBinding:
    """Build a :class:`SortBinding` from ``bind`` declarations of a theory file."""
    base_dir = Path(base_dir)
    values: dict[str, np.ndarray] = {}
    labels: dict[str, list] = {}
    pending = dict(sort_data)
    while pending:
        progressed = False
        for s, src in list(pending.items()):
            if src.kind == "synthetic":
                if extra is None or s not in extra:
                    raise DataError(f"sort {s!r} is declared synthetic but no data was supplied")
                values[s], labels[s] = extra[s], extra.labels[s]
            elif src.index is None:
                values[s], labels[s] = read_sort_csv(base_dir / src.path)
            elif src.index in values:
                # indices refer to file rows, so resolve them before deduplication
                values[s], labels[s] = read_index_csv(base_dir / src.path, values[src.index], labels[src.index])
            else:
                continue
            del pending[s]
            progressed = True
        if not progressed:
            raise DataError(f"circular or unresolved index bindings: {sorted(pending)}")
    out = SortBinding(values, labels)
    if sig is not None:
        out.check(sig)
    return out
