"""Model synthesis: interval-constrained weighted likelihood, Adam, restarts, SGLD.

The training objective for parameters ``theta`` (model tensors and raw
flexible weights) is::

    J = sum_k r_k log pbar_k  -  lam_c sum_k hinge_k^2  -  mu sum_flex (r_k - 1)^2  -  |theta|^2 / (2 s^2)

where ``pbar_k`` is the mean approximate probability of axiom ``k`` over the
epoch's sample bindings and ``hinge_k`` its distance to ``[l_k, u_k]``.
Acceptance and reports use the strict likelihood instead: the product of
``pbar_k ** r_k`` if every mean is inside its interval, else 0, normalized to
``L ** (1 / sum r)``.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .grounding import InitConfig, ParamStore, init_params
from .logic import Signature, Theory
from .sampling import BatchSpec, MeanEstimate, SortBinding, draw_sample_bindings, sample_values
from .semantics import APPROX, ParamInterpretation, SemanticsMode, compile, curriculum, run_graph

EPS = 1e-7


class SynthesisFailed(RuntimeError):
    def __init__(self, message: str, best: Optional["ModelResult"] = None):
        super().__init__(message)
        self.best = best


class SGLDDiverged(RuntimeError):
    pass


@dataclass
class SynthConfig:
    max_epochs: int = 300
    patience: int = 50
    min_likelihood: float = 0.0
    max_trials: int = 3
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    penalty_stiffness: float = 100.0
    weight_reg: float = 1.0
    prior_stddev: float = 0.0
    curriculum: Optional[list] = None  # [(epoch, exponent), ...]; "default" for the staged schedule
    train_batch: BatchSpec = field(default_factory=lambda: BatchSpec(sample_size=1))
    eval_batch: BatchSpec = field(default_factory=lambda: BatchSpec(sample_size=100))
    init: InitConfig = field(default_factory=InitConfig)
    seed: int = 0

    def __post_init__(self):
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 <= self.min_likelihood <= 1.0:
            raise ValueError("min_likelihood must lie in [0, 1]")
        if not self.penalty_stiffness > 0:
            raise ValueError("penalty stiffness must be positive")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        if self.prior_stddev < 0:
            raise ValueError("prior_stddev must be >= 0")

    def schedule(self) -> list[tuple[int, float]]:
        if self.curriculum is None:
            return []
        if self.curriculum == "default":
            m = self.max_epochs
            return [(0, 1.0), (int(0.25 * m), 4.0), (int(0.5 * m), 16.0), (int(0.75 * m), math.inf)]
        return sorted((int(e), float(k)) for e, k in self.curriculum)

    def mode_at(self, epoch: int) -> SemanticsMode:
        k = math.inf
        for e, exp in self.schedule():
            if epoch >= e:
                k = exp
        return APPROX if math.isinf(k) else curriculum(k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["curriculum"] = self.curriculum
        return d

    @staticmethod
    def from_dict(d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("train_batch", "eval_batch"):
            if key in d and isinstance(d[key], dict):
                d[key] = BatchSpec(**d[key])
        if "init" in d and isinstance(d["init"], dict):
            d["init"] = InitConfig(**d["init"])
        known = set(SynthConfig.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthesis settings {sorted(unknown)}")
        return SynthConfig(**d)


@dataclass(frozen=True)
class AxiomReport:
    index: int
    name: Optional[str]
    weight: float
    estimate: MeanEstimate
    lower: float
    upper: float

    @property
    def mean(self) -> float:
        return self.estimate.mean

    @property
    def in_interval(self) -> bool:
        return self.lower <= self.estimate.mean <= self.upper


@dataclass(frozen=True)
class HistoryRow:
    epoch: int
    objective: float
    penalty: float
    strict_likelihood: float


@dataclass
class ModelResult:
    params: ParamStore
    likelihood: float  # normalized strict likelihood in [0, 1]
    log_likelihood: float  # sum r log pbar
    feasible: bool
    axioms: list[AxiomReport]
    history: list[HistoryRow]
    trial: int
    seed: int
    accepted: bool = True

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "trial": self.trial,
            "likelihood": self.likelihood,
            "log_likelihood": self.log_likelihood,
            "feasible": self.feasible,
            "accepted": self.accepted,
            "epochs": len(self.history),
            "axioms": [
                {"index": a.index, "name": a.name, "weight": a.weight, "lower": a.lower, "upper": a.upper,
                 "in_interval": a.in_interval, **a.estimate.as_dict()}
                for a in self.axioms
            ],
        }


# ---------------------------------------------------------------------------
# objective pieces
# ---------------------------------------------------------------------------


def axiom_weights(theory: Theory, params: ParamStore) -> np.ndarray:
    return np.array([params.weight(i, ax.weight) for i, ax in enumerate(theory.axioms)])


def theory_log_likelihood(theory: Theory, means: Sequence[float], weights: Sequence[float]) -> tuple[float, np.ndarray]:
    """(sum r log pbar, per-axiom r log pbar); interval constraints are not applied here."""
    means = np.asarray(means, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if len(means) != len(theory.axioms):
        raise ValueError("one mean per axiom is required")
    per = weights * np.log(np.maximum(means, EPS))
    per = np.where(weights == 0, 0.0, per)
    return float(per.sum()), per


def feasible(theory: Theory, means: Sequence[float]) -> np.ndarray:
    return np.array([ax.lower <= m <= ax.upper for ax, m in zip(theory.axioms, means)], dtype=bool)


def strict_likelihood(theory: Theory, means, weights) -> tuple[float, float]:
    """(strict likelihood, normalized strict likelihood)."""
    if not len(theory.axioms):
        return 1.0, 1.0
    if not feasible(theory, means).all():
        return 0.0, 0.0
    ll, _ = theory_log_likelihood(theory, means, weights)
    total = float(np.sum(weights))
    return math.exp(ll), (math.exp(ll / total) if total > 0 else 1.0)


def constraint_penalty(theory: Theory, means, stiffness: float) -> float:
    if not stiffness > 0:
        raise ValueError("penalty stiffness must be positive")
    means = np.asarray(means, dtype=np.float64)
    lo = np.array([ax.lower for ax in theory.axioms])
    hi = np.array([ax.upper for ax in theory.axioms])
    return float(stiffness * np.sum(np.maximum(0.0, lo - means) ** 2 + np.maximum(0.0, means - hi) ** 2))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam ascent/descent on a :class:`ParamStore` (descends ``grads``)."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: ParamStore, grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(k, 0.0) * b2 + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class _Objective:
    """Differentiable objective over a fixed theory, rebuilt per evaluation."""

    def __init__(self, theory: Theory, sig: Signature, cfg: SynthConfig):
        self.theory = theory
        self.sig = sig
        self.cfg = cfg
        self.graphs = [compile(ax.formula, sig, checked=ax.formula.type is not None) for ax in theory.axioms]
        self.lo = np.array([ax.lower for ax in theory.axioms])
        self.hi = np.array([ax.upper for ax in theory.axioms])

    def __call__(self, params: ParamStore, bindings: Sequence[SortBinding], mode: SemanticsMode,
                 penalty: bool = True, prior: bool = True):
        """Returns (objective, penalty, means, gradients of the objective)."""
        interp = ParamInterpretation(self.sig, params, requires_grad=True)
        leaves = interp.leaves
        terms = []
        means = []
        pen_terms = []
        if self.graphs:
            sums = [None] * len(self.graphs)
            for b in bindings:
                cache: dict = {}
                for k, g in enumerate(self.graphs):
                    v = run_graph(g, None, b, None, mode, requires_grad=True, cache=cache, interp=interp).parts[0]
                    sums[k] = v if sums[k] is None else ad.add(sums[k], v)
            n = float(len(bindings))
            for k, ax in enumerate(self.theory.axioms):
                pbar = ad.mul(sums[k], 1.0 / n)
                means.append(float(pbar.value))
                if ax.weight is None:
                    r = ad.softplus(leaves[f"weight:{k}"])
                    terms.append(ad.mul(r, ad.log(pbar, EPS)))
                    terms.append(ad.mul(ad.square(ad.sub(r, 1.0)), -self.cfg.weight_reg))
                else:
                    terms.append(ad.mul(ad.log(pbar, EPS), float(ax.weight)))
                if penalty:
                    below = ad.relu(ad.sub(float(ax.lower), pbar))
                    above = ad.relu(ad.sub(pbar, float(ax.upper)))
                    pen_terms.append(ad.mul(ad.add(ad.square(below), ad.square(above)), self.cfg.penalty_stiffness))
        if prior and self.cfg.prior_stddev > 0:
            s2 = self.cfg.prior_stddev**2
            for key, leaf in leaves.items():
                if not key.startswith("weight:"):
                    terms.append(ad.mul(ad.sum_(ad.square(leaf)), -0.5 / s2))
        pen = Tensor(0.0)
        for t in pen_terms:
            pen = ad.add(pen, t)
        obj = ad.mul(pen, -1.0)
        for t in terms:
            obj = ad.add(obj, t)
        if obj.requires_grad:
            obj.backward()
        grads = {k: (l.grad if l.grad is not None else np.zeros_like(l.value)) for k, l in leaves.items()}
        return float(obj.value), float(pen.value), np.array(means), grads


# ---------------------------------------------------------------------------
# evaluation of a finished model
# ---------------------------------------------------------------------------


def evaluate_theory(theory: Theory, sig: Signature, params: ParamStore, delta: SortBinding,
                    spec: BatchSpec, mode: SemanticsMode = APPROX, bindings=None):
    """Per-axiom mean estimates over ``spec`` sample bindings plus strict likelihood."""
    graphs = [compile(ax.formula, sig, checked=ax.formula.type is not None) for ax in theory.axioms]
    bindings = draw_sample_bindings(delta, spec) if bindings is None else bindings
    vals = sample_values(graphs, params, bindings, mode)
    weights = axiom_weights(theory, params)
    reports = []
    for k, ax in enumerate(theory.axioms):
        reports.append(AxiomReport(k, ax.name, float(weights[k]), MeanEstimate.from_samples(vals[:, k, :]),
                                   ax.lower, ax.upper))
    means = [r.mean for r in reports]
    ll, _ = theory_log_likelihood(theory, means, weights) if reports else (0.0, None)
    _, norm = strict_likelihood(theory, means, weights)
    return reports, ll, norm


def _trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def _run_trial(theory, sig, delta, cfg: SynthConfig, trial: int, log: Optional[Callable] = None) -> ModelResult:
    tseed = _trial_seed(cfg.seed, trial)
    params = init_params(sig, theory, InitConfig(tseed, cfg.init.scale, cfg.init.scheme))
    objective = _Objective(theory, sig, cfg)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(tseed)
    history: list[HistoryRow] = []
    best = -math.inf
    since = 0
    switch_epochs = {e for e, _ in cfg.schedule()}
    weights_fn = lambda: axiom_weights(theory, params)  # noqa: E731
    for epoch in range(cfg.max_epochs):
        if epoch in switch_epochs and epoch > 0:
            best, since = -math.inf, 0
        mode = cfg.mode_at(epoch)
        bindings = draw_sample_bindings(delta, cfg.train_batch, seed=int(rng.integers(2**63)))
        obj, pen, means, grads = objective(params, bindings, mode)
        if not math.isfinite(obj):
            break
        _, norm = strict_likelihood(theory, means, weights_fn())
        history.append(HistoryRow(epoch, obj, pen, norm))
        if log is not None:
            log(trial, epoch, obj, pen, norm, params)
        if obj > best + 1e-9:
            best, since = obj, 0
        else:
            since += 1
            if since >= cfg.patience:
                break
        opt.step(params, {k: -g for k, g in grads.items()})
    reports, ll, norm = evaluate_theory(theory, sig, params, delta, cfg.eval_batch)
    feas = all(r.in_interval for r in reports)
    return ModelResult(params, norm, ll, feas, reports, history, trial, cfg.seed,
                       accepted=feas and norm >= cfg.min_likelihood)


def synthesize(theory: Theory, sig: Signature, delta: SortBinding, cfg: SynthConfig,
               log: Optional[Callable] = None) -> ModelResult:
    """Restart until a trial's strict normalized likelihood reaches ``min_likelihood``."""
    best: Optional[ModelResult] = None
    for trial in range(cfg.max_trials):
        res = _run_trial(theory, sig, delta, cfg, trial, log)
        if res.accepted:
            return res
        if best is None or res.likelihood > best.likelihood:
            best = res
    raise SynthesisFailed(
        f"no model reached likelihood {cfg.min_likelihood} in {cfg.max_trials} trials "
        f"(best {best.likelihood:.4f})", best)


def _synth_job(args):
    theory, sig, delta, cfg = args
    try:
        return synthesize(theory, sig, delta, cfg)
    except SynthesisFailed as e:
        return e


def sample_models(theory: Theory, sig: Signature, delta: SortBinding, cfg: SynthConfig, n_models: int,
                  workers: Optional[int] = None, raise_on_failure: bool = True) -> list[ModelResult]:
    """``n_models`` independent syntheses with seeds ``cfg.seed + index``, sorted by likelihood.

    Failed runs are kept (``accepted`` False) so callers can inspect them; if
    every run fails and ``raise_on_failure`` is set, :class:`SynthesisFailed`
    carries the best one.
    """
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    jobs = [(theory, sig, delta, _with_seed(cfg, cfg.seed + i)) for i in range(n_models)]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and n_models > 1:
        with cf.ProcessPoolExecutor(max_workers=min(workers, n_models)) as pool:
            outs = list(pool.map(_synth_job, jobs))
    else:
        outs = [_synth_job(j) for j in jobs]
    results = []
    for o in outs:
        if isinstance(o, SynthesisFailed):
            o.best.accepted = False
            results.append(o.best)
        else:
            results.append(o)
    results.sort(key=lambda r: (-r.likelihood, r.seed))
    if raise_on_failure and not any(r.accepted for r in results):
        raise SynthesisFailed(f"all {n_models} model syntheses failed", results[0])
    return results


def _with_seed(cfg: SynthConfig, seed: int) -> SynthConfig:
    d = dict(cfg.__dict__)
    d["seed"] = seed
    return SynthConfig(**d)


def write_history(history: Sequence[HistoryRow], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "objective", "penalty", "strict_likelihood"])
        for h in history:
            w.writerow([h.epoch, repr(h.objective), repr(h.penalty), repr(h.strict_likelihood)])
    return path


# ---------------------------------------------------------------------------
# posterior sampling
# ---------------------------------------------------------------------------


@dataclass
class SGLDChain:
    samples: list[ParamStore]
    steps: list[int]
    objectives: list[float]

    def values(self, key: str) -> np.ndarray:
        return np.array([s[key] for s in self.samples])


def sgld_sample(theory: Theory, sig: Signature, delta: Optional[SortBinding], cfg: SynthConfig, n_steps: int,
                step_schedule: Union[float, Callable[[int], float]], thin: int = 1, burn_in: int = 0,
                init: Optional[ParamStore] = None) -> SGLDChain:
    """theta += eta/2 * grad(log likelihood + log prior) + N(0, eta).

    The likelihood term is the same smooth objective used in synthesis
    (penalty included); the prior is isotropic Gaussian with ``prior_stddev``.
    """
    if not cfg.prior_stddev > 0:
        raise ValueError("SGLD needs a proper prior (prior_stddev > 0)")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    eta_of = step_schedule if callable(step_schedule) else (lambda t: float(step_schedule))
    params = init.copy() if init is not None else init_params(sig, theory, InitConfig(cfg.seed, cfg.init.scale))
    rng = np.random.default_rng(cfg.seed)
    objective = _Objective(theory, sig, cfg)
    has_axioms = len(theory.axioms) > 0
    s2 = cfg.prior_stddev**2
    keys = list(params.keys())
    chain = SGLDChain([], [], [])
    for t in range(n_steps):
        eta = float(eta_of(t))
        if has_axioms:
            bindings = draw_sample_bindings(delta, cfg.train_batch, seed=int(rng.integers(2**63)))
            obj, _, _, grads = objective(params, bindings, cfg.mode_at(t))
        else:
            grads = {k: -params[k] / s2 for k in keys if not k.startswith("weight:")}
            obj = float(sum(-0.5 * np.sum(params[k] ** 2) / s2 for k in grads))
        if not math.isfinite(obj) or any(not np.all(np.isfinite(g)) for g in grads.values()):
            raise SGLDDiverged(f"non-finite objective at step {t} (eta={eta}); last objective {obj}")
        for k, g in grads.items():
            noise = rng.normal(0.0, math.sqrt(eta), size=np.shape(params[k])) if eta > 0 else 0.0
            params[k] = params[k] + 0.5 * eta * g + noise
        if t >= burn_in and (t - burn_in) % thin == 0:
            chain.samples.append(params.copy())
            chain.steps.append(t)
            chain.objectives.append(obj)
    return chain
