"""Synthetic causal network and the bundled causality theory.

The generator draws a random DAG (random topological order, Bernoulli edges),
derives the relations of the theory from it and writes the three data sets the
theory binds: gene embeddings, ``lidata`` pairs (detected causality) and
``codata`` pairs (detected independence).

Embeddings carry information about the structure.  Coordinate 0 is the
node's normalized depth in the DAG (a proxy for time).  The other coordinates
place each child near the mean of its parents (``offset``), or alternatively
are a classical multidimensional scaling of shortest-path distances in the
undirected immediate-causality graph (``mds``).  With random embeddings no
function of the data could satisfy the data-consistency axioms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .parser import TheoryFile, parse_theory_file

BASIC = [
    "forall i:gene . ~li(i,i)",
    "forall i:gene . co(i,i)",
    "forall i,j:gene . li(i,j) => li(j,i)",
    "forall i,j:gene . co(i,j) => co(j,i)",
    "forall i,j:gene . li(i,j) => ~co(i,j)",
    "forall i,j:gene . co(i,j) => ~li(i,j)",
    "forall i,j:gene . co(i,j) | li(i,j)",
]
DATA = [
    "[0.65, 0.75] forall p:lidata . li(p)",
    "[0.45, 0.95] forall p:codata . co(p)",
]
DIRECTED = [
    "forall i,j:gene . di(i,j) => li(i,j)",
    "forall i,j:gene . li(i,j) => (di(i,j) | di(j,i))",
    "forall i,j:gene . di(i,j) => ~di(j,i)",
    "forall i:gene . ~di(i,i)",
    "forall i,j,k:gene . di(i,j) & di(j,k) => di(i,k)",
]
IMMEDIATE = [
    "forall i:gene . ~im(i,i)",
    "forall i,j:gene . im(i,j) => ~im(j,i)",
    "forall i,j:gene . im(i,j) => di(i,j)",
    "forall i,k:gene . di(i,k) & (~exists j:gene . di(i,j) & di(j,k)) => im(i,k)",
    "forall i,j,k:gene . im(i,j) & im(j,k) => ~im(i,k)",
    "forall i,j,k:gene . im(i,k) & im(j,k) => co(i,j)",
    "forall i,j,k:gene . im(k,i) & im(k,j) => co(i,j)",
    "forall i,j,k:gene . im(i,j) & im(j,k) => li(i,k)",
]
DENSITY = [
    "mean i,j:gene . im(i,j)",
    "forall j:gene . ~mean i:gene . im(i,j)",
    "forall i:gene . ~mean j:gene . im(i,j)",
]
GROUPS = {"basic": BASIC, "data": DATA, "directed": DIRECTED, "immediate": IMMEDIATE, "density": DENSITY}


@dataclass
class DemoConfig:
    n: int = 30
    d: int = 6
    density: float = 0.08
    flip_rate: float = 0.05
    li_threshold: float = 0.7
    co_threshold: float = 0.7
    complexity: int = 8
    embedding: str = "offset"  # or "mds"
    spread: float = 0.15  # spatial offset scale per causal step ("offset" embedding)
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("the network needs at least 2 nodes")
        if self.d < 2:
            raise ValueError("embeddings need at least 2 dimensions")
        if not 0.0 < self.density < 1.0:
            raise ValueError("edge density must lie in (0, 1)")
        if not 0.0 <= self.flip_rate < 0.5:
            raise ValueError("flip rate must lie in [0, 0.5)")
        if self.embedding not in ("offset", "mds"):
            raise ValueError(f"unknown embedding {self.embedding!r}")


@dataclass
class GroundTruthNet:
    n: int
    d: int
    order: np.ndarray  # topological order (node ids)
    raw: np.ndarray  # Bernoulli edges before transitive reduction
    im: np.ndarray  # bool (n, n), transitive reduction
    di: np.ndarray  # transitive closure
    li: np.ndarray  # symmetric closure of di
    co: np.ndarray  # complement of li (reflexive)
    embeddings: np.ndarray  # (n, d)
    lidata: np.ndarray  # (m, 2) index pairs
    codata: np.ndarray  # (m, 2) index pairs

    @property
    def im_density(self) -> float:
        return float(self.im.sum()) / self.n**2

    def edges(self, reverse: bool = False) -> set[tuple[int, int]]:
        i, j = np.nonzero(self.im)
        return {(int(b), int(a)) if reverse else (int(a), int(b)) for a, b in zip(i, j)}


def transitive_closure(adj: np.ndarray) -> np.ndarray:
    reach = adj.astype(bool).copy()
    for k in range(len(reach)):
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    return reach


def transitive_reduction(adj: np.ndarray) -> np.ndarray:
    """For a DAG: keep (i, k) unless some j has i -> j and j ->* k."""
    closure = transitive_closure(adj)
    implied = (closure.astype(int) @ closure.astype(int)) > 0
    return closure & ~implied


def _classical_mds(dist: np.ndarray, dims: int) -> np.ndarray:
    n = len(dist)
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ (dist**2) @ j
    w, v = np.linalg.eigh(b)
    idx = np.argsort(w)[::-1][:dims]
    return v[:, idx] * np.sqrt(np.maximum(w[idx], 0.0))


def _shortest_paths(adj: np.ndarray, cap: float) -> np.ndarray:
    n = len(adj)
    dist = np.where(adj, 1.0, np.inf)
    np.fill_diagonal(dist, 0.0)
    for k in range(n):
        dist = np.minimum(dist, dist[:, k : k + 1] + dist[k : k + 1, :])
    return np.minimum(dist, cap)


def _depth(im: np.ndarray, order: np.ndarray) -> np.ndarray:
    depth = np.zeros(len(im))
    for v in order:
        parents = np.nonzero(im[:, v])[0]
        if len(parents):
            depth[v] = depth[parents].max() + 1
    return depth


def structure_from_edges(raw: np.ndarray):
    im = transitive_reduction(raw)
    di = transitive_closure(raw)
    li = di | di.T
    co = ~li
    np.fill_diagonal(co, True)
    return im, di, li, co


def generate_network(cfg: DemoConfig, out_dir=None, raw: Optional[np.ndarray] = None) -> GroundTruthNet:
    """Random ground truth; ``raw`` overrides the Bernoulli edges (for tests)."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    order = rng.permutation(n)
    if raw is None:
        rank = np.empty(n, dtype=int)
        rank[order] = np.arange(n)
        upper = rank[:, None] < rank[None, :]
        raw = upper & (rng.random((n, n)) < cfg.density)
    else:
        raw = np.asarray(raw, dtype=bool)
        order = _topological_order(raw)
    im, di, li, co = structure_from_edges(raw)

    depth = _depth(im, order)
    t = depth / max(depth.max(), 1.0)
    if cfg.embedding == "mds":
        dist = _shortest_paths(im | im.T, cap=4.0)
        spatial = _classical_mds(dist, cfg.d - 1)
        spatial /= max(np.abs(spatial).max(), 1e-12)
    else:
        spatial = np.zeros((n, cfg.d - 1))
        for v in order:
            parents = np.nonzero(im[:, v])[0]
            if len(parents):
                spatial[v] = spatial[parents].mean(axis=0) + rng.normal(0.0, cfg.spread, cfg.d - 1)
            else:
                spatial[v] = rng.uniform(-1.0, 1.0, cfg.d - 1)
    emb = np.column_stack([2.0 * t - 1.0, spatial])
    emb += rng.normal(0.0, 0.02, size=emb.shape)

    # a pair enters the evidence set of its true relation unless its detector
    # score is flipped below threshold
    lidata, codata = [], []
    for a in range(n):
        for b in range(a + 1, n):
            flipped = rng.random() < cfg.flip_rate
            score = 1.0 - rng.uniform(0.0, 0.3) if not flipped else rng.uniform(0.0, 0.3)
            if li[a, b] and score >= cfg.li_threshold:
                lidata += [(a, b), (b, a)]
            elif not li[a, b] and score >= cfg.co_threshold:
                codata += [(a, b), (b, a)]
    if not lidata:
        raise ValueError("the network produced no lidata pairs; increase the edge density")
    if not codata:
        raise ValueError("the network produced no codata pairs; decrease the edge density")
    net = GroundTruthNet(n, cfg.d, order, raw, im, di, li, co, emb, np.array(lidata), np.array(codata))
    if out_dir is not None:
        write_demo_files(net, out_dir, cfg)
    return net


def _topological_order(adj: np.ndarray) -> np.ndarray:
    indeg = adj.sum(axis=0).astype(int)
    ready = sorted(np.nonzero(indeg == 0)[0].tolist())
    out = []
    while ready:
        v = ready.pop(0)
        out.append(v)
        for w in np.nonzero(adj[v])[0]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(int(w))
    if len(out) != len(adj):
        raise ValueError("edge matrix is not acyclic")
    return np.array(out)


def write_demo_files(net: GroundTruthNet, out_dir, cfg: Optional[DemoConfig] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "genes.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"x{k}" for k in range(net.d)])
        for i, row in enumerate(net.embeddings):
            w.writerow([f"g{i}"] + [repr(float(x)) for x in row])
    for name, pairs in (("lidata", net.lidata), ("codata", net.codata)):
        with (out / f"{name}.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j"])
            w.writerows(pairs.tolist())
    (out / "theory.palo").write_text(bundled_theory_text(net, cfg))
    np.savetxt(out / "true_im.csv", net.im.astype(int), fmt="%d", delimiter=",")
    return out


def density_intervals(rho: float, slack: float = 0.5) -> dict[str, tuple[float, float]]:
    """Density and degree intervals rescaled to an immediate-causality density ``rho``."""
    return {
        "density": (max(0.0, (1 - slack) * rho), min(1.0, (1 + slack) * rho)),
        "degree": (max(0.0, 1.0 - (1 + slack) * rho), 1.0),
    }


def bundled_theory_text(net: Optional[GroundTruthNet] = None, cfg: Optional[DemoConfig] = None) -> str:
    cfg = cfg or DemoConfig()
    if net is not None:
        rho, d = net.im_density, net.d
    else:
        rho, d = cfg.density * (cfg.n - 1) / (2 * cfg.n), cfg.d
    iv = density_intervals(rho)
    lines = [
        "# Causality theory over a gene embedding space.",
        f"type Gene : {d};",
        f"complexity default = {cfg.complexity};",
        "sort gene : Gene;",
        "sort lidata : Gene Gene;",
        "sort codata : Gene Gene;",
        "pred li : Gene Gene;  # undirected causality",
        "pred co : Gene Gene;  # independence",
        "pred di : Gene Gene;  # directed causality",
        "pred im : Gene Gene;  # immediate causality",
        'bind gene = csv("genes.csv");',
        'bind lidata = csv("lidata.csv", index=gene);',
        'bind codata = csv("codata.csv", index=gene);',
        "",
    ]
    for group, axioms in GROUPS.items():
        lines.append(f"# {group}")
        for k, ax in enumerate(axioms):
            if group == "density":
                lo, hi = iv["density"] if k == 0 else iv["degree"]
                ax = f"[{lo:.6g}, {hi:.6g}] {ax}"
            lines.append(f"axiom {group}{k + 1}: {ax};")
        lines.append("")
    return "\n".join(lines)


def bundled_theory(net: Optional[GroundTruthNet] = None, cfg: Optional[DemoConfig] = None) -> TheoryFile:
    return parse_theory_file(bundled_theory_text(net, cfg), "<bundled>")


def demo_binding(net: GroundTruthNet):
    from .sampling import SortBinding

    e = net.embeddings
    pairs = {s: np.concatenate([e[p[:, 0]], e[p[:, 1]]], axis=1) for s, p in
             (("lidata", net.lidata), ("codata", net.codata))}
    return SortBinding(
        {"gene": e, **pairs},
        {"gene": list(range(net.n)), "lidata": [tuple(p) for p in net.lidata.tolist()],
         "codata": [tuple(p) for p in net.codata.tolist()]},
    )


@dataclass(frozen=True)
class RecoveryScore:
    precision: float
    recall: float
    f1: float
    orientation: str  # "forward" or "reverse"
    consistency: float  # fraction of oriented edge votes agreeing with the winning orientation
    n_edges: int
    likelihood: Optional[float] = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _prf(pred: set, true: set) -> tuple[float, float, float]:
    tp = len(pred & true)
    p = tp / len(pred) if pred else 0.0
    r = tp / len(true) if true else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def score_edges(edges: set[tuple[int, int]], net: GroundTruthNet, likelihood: Optional[float] = None) -> RecoveryScore:
    fwd = _prf(edges, net.edges())
    rev = _prf(edges, net.edges(reverse=True))
    votes_f = sum(1 for a, b in edges if net.di[a, b])
    votes_r = sum(1 for a, b in edges if net.di[b, a])
    # orientation by F1, ties broken by the direction vote
    forward = (fwd[2], votes_f) >= (rev[2], votes_r)
    p, r, f = fwd if forward else rev
    votes = votes_f + votes_r
    cons = (votes_f if forward else votes_r) / votes if votes else 1.0
    return RecoveryScore(p, r, f, "forward" if forward else "reverse", cons, len(edges), likelihood)


def im_matrix(params, sig, net: GroundTruthNet) -> np.ndarray:
    from .parser import parse_formula
    from .semantics import APPROX, compile, run_graph

    term = parse_formula("im(i,j)", sig)
    g = compile(term, sig, checked=True)
    r = run_graph(g, params, {"gene": net.embeddings}, axis_vars={"i": "gene", "j": "gene"}, mode=APPROX)
    return r.numpy()


def score_recovery(params, net: GroundTruthNet, sig, threshold: float = 0.7,
                   likelihood: Optional[float] = None) -> RecoveryScore:
    """Edge precision/recall of extracted ``im`` modulo a global time reversal."""
    probs = im_matrix(params, sig, net) if not isinstance(params, np.ndarray) else params
    mask = probs >= threshold
    np.fill_diagonal(mask, False)
    i, j = np.nonzero(mask)
    return score_edges({(int(a), int(b)) for a, b in zip(i, j)}, net, likelihood)


def di_orientation(params, net: GroundTruthNet, sig) -> tuple[str, float]:
    """Global time direction of a model's ``di``: mass on true versus reversed pairs."""
    from .parser import parse_formula
    from .semantics import compile, run_graph

    g = compile(parse_formula("di(i,j)", sig), sig, checked=True)
    m = run_graph(g, params, {"gene": net.embeddings}, axis_vars={"i": "gene", "j": "gene"}).numpy()
    fwd = float(m[net.di].sum())
    rev = float(m[net.di.T].sum())
    total = fwd + rev
    margin = (fwd - rev) / total if total > 0 else 0.0
    return ("forward" if fwd >= rev else "reverse"), margin


# ---------------------------------------------------------------------------
# end-to-end pipeline
# ---------------------------------------------------------------------------

DEMO_BATCH = {"gene": 15, "lidata": 60, "codata": 60}


def demo_synth_config(seed: int = 0, max_epochs: Optional[int] = None):
    """Synthesis settings used by the demo pipeline and the acceptance run."""
    from .grounding import InitConfig
    from .sampling import BatchSpec
    from .synthesis import SynthConfig

    batch = dict(DEMO_BATCH)
    return SynthConfig(
        max_epochs=max_epochs or DEMO_EPOCHS,
        patience=DEMO_EPOCHS,
        max_trials=1,
        learning_rate=0.01,
        init=InitConfig(scale=DEMO_INIT_SCALE),
        train_batch=BatchSpec(batch, sample_size=1),
        eval_batch=BatchSpec(batch, sample_size=100, seed=seed),
        seed=seed,
    )


DEMO_EPOCHS = 1000
DEMO_INIT_SCALE = 3.0


@dataclass
class DemoModel:
    seed: int
    likelihood: float
    feasible: bool
    recovery: RecoveryScore
    orientation: str
    orientation_margin: float
    path: str

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["recovery"] = self.recovery.as_dict()
        return d


@dataclass
class DemoSummary:
    n: int
    true_edges: int
    models: list[DemoModel]
    best: dict  # validation report of the best model (JSON form)
    comparison: dict
    recovery: RecoveryScore
    orientation_counts: dict
    runtime: float

    @property
    def any_accepted(self) -> bool:
        return any(m.feasible for m in self.models)

    @property
    def bimodal(self) -> bool:
        return self.orientation_counts.get("forward", 0) > 0 and self.orientation_counts.get("reverse", 0) > 0

    @property
    def best_likelihood(self) -> float:
        return max(m.likelihood for m in self.models)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "true_edges": self.true_edges,
            "best_likelihood": self.best_likelihood,
            "recovery": self.recovery.as_dict(),
            "orientation_counts": self.orientation_counts,
            "bimodal": self.bimodal,
            "runtime_seconds": self.runtime,
            "models": [m.as_dict() for m in self.models],
            "validation": self.best,
            "soft_vs_crisp": self.comparison,
        }

    def to_text(self) -> str:
        lines = [
            f"network: {self.n} genes, {self.true_edges} immediate edges",
            f"models: {len(self.models)}, best normalized likelihood {self.best_likelihood:.4f}",
            f"im recovery at 0.7 (best model): precision {self.recovery.precision:.3f} recall "
            f"{self.recovery.recall:.3f} F1 {self.recovery.f1:.3f} ({self.recovery.orientation})",
            f"orientations: forward {self.orientation_counts.get('forward', 0)}, "
            f"reverse {self.orientation_counts.get('reverse', 0)}"
            + ("" if self.bimodal else "  [unimodal: only one time direction sampled]"),
            f"soft vs crisp: max |delta| {self.comparison['max_delta']:.4f}",
            "",
            f"{'axiom':<12} {'weight':>7} {'mean':>7} {'lower':>7} {'upper':>7} {'stripped':>8}  interval",
        ]
        for row in self.best["formulas"]:
            est = row["estimates"].get("bounds") or row["estimates"]["approx"]
            strip = row["stripped"].get("approx")
            iv = row["interval"]
            lines.append(
                f"{row['name']:<12} {row['weight']:>7.3f} {est['mean']:>7.4f} {est['lower_mean']:>7.4f} "
                f"{est['upper_mean']:>7.4f} {'-' if strip is None else format(strip['mean'], '.4f'):>8}  "
                f"[{iv[0]:g}, {iv[1]:g}]{'' if row['in_interval'] else '  VIOLATED'}"
            )
        lines.append(f"runtime {self.runtime:.1f} s")
        return "\n".join(lines) + "\n"


def _fit_batches(scfg, sizes: dict):
    """Shrink batch sizes that exceed a small network's sort sizes."""
    from dataclasses import replace

    def fit(spec):
        return replace(spec, batch={s: min(b, sizes.get(s, b)) for s, b in spec.batch.items()})

    return replace(scfg, train_batch=fit(scfg.train_batch), eval_batch=fit(scfg.eval_batch))


def run_demo(dcfg: DemoConfig, scfg, n_models: int, out_dir, workers: Optional[int] = None) -> DemoSummary:
    """Generate, synthesize, validate, compare semantics, extract ``im`` and score recovery."""
    import time

    from .analysis import compare_semantics, extract_relation, validate
    from .grounding import save_model
    from .parser import load_theory_file
    from .sampling import load_binding
    from .semantics import APPROX, BOUNDS
    from .synthesis import axiom_weights, sample_models

    t0 = time.time()
    out = Path(out_dir)
    net = generate_network(dcfg)
    data_dir = write_demo_files(net, out / "data", dcfg)
    tf = load_theory_file(data_dir / "theory.palo")
    sig = tf.signature
    delta = load_binding(tf.sort_data, data_dir, sig)
    scfg = _fit_batches(scfg, delta.sizes())
    results = sample_models(tf.theory, sig, delta, scfg, n_models, workers, raise_on_failure=False)
    model_dir = out / "models"
    model_dir.mkdir(parents=True, exist_ok=True)
    models = []
    for res in results:
        path = model_dir / f"model_{res.seed}.palomodel"
        save_model(res.params, path, {"theory": str((data_dir / "theory.palo").resolve()), **res.summary()})
        rec = score_recovery(res.params, net, sig, 0.7, res.likelihood)
        orient, margin = di_orientation(res.params, net, sig)
        models.append(DemoModel(res.seed, res.likelihood, res.feasible, rec, orient, margin, str(path)))
    best = results[0]
    weights = axiom_weights(tf.theory, best.params)
    report = validate(best.params, tf.theory, delta, scfg.eval_batch, sig, (APPROX, BOUNDS), weights=weights)
    comparison = compare_semantics(best.params, tf.theory, delta, scfg.eval_batch, sig, tau=0.5, strip=True)
    edges = extract_relation(best.params, "im", delta, sig, 0.7, drop_isolated=True)
    edges.to_dot(out / "im.dot", "im")
    edges.to_csv(out / "im.csv")
    counts = {"forward": 0, "reverse": 0}
    for m in models:
        counts[m.orientation] += 1
    return DemoSummary(net.n, int(net.im.sum()), models, report.as_dict(), comparison.as_dict(), models[0].recovery,
                       counts, time.time() - t0)
