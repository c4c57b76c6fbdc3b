"""Command-line front end: ``palo synth|validate|eval|export|demo``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (
    CellCapExceeded,
    DEFAULT_BINS,
    DEFAULT_CELL_CAP,
    NonBinaryPredicate,
    evaluate,
    extract_relation,
    histogram,
    validate,
)
from .grounding import FormatError, ShapeMismatch, load_model, read_manifest, save_model
from .logic import Theory, WellFormednessError
from .parser import ParseError, TheoryFile, load_theory_file, parse_formula
from .sampling import BatchLargerThanSort, BatchSpec, DataError, load_binding
from .semantics import parse_mode
from .synthesis import SynthConfig, axiom_weights, sample_models

EXIT_OK = 0
EXIT_USER = 2
EXIT_SYNTH = 3
EXIT_RESOURCE = 4
OUTPUT_ENV = "PALO_OUTPUT_DIR"
MODEL_SUFFIX = ".palomodel"


class UserError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ProjectConfig:
    """JSON project file; command-line flags override its fields."""

    theory: Optional[str] = None
    output_dir: str = "palo_out"
    models: int = 1
    workers: int = 0  # 0 means one per logical CPU
    mode: str = "approx"
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.models < 1:
            raise UserError("models must be >= 1")
        if self.workers < 0:
            raise UserError("workers must be >= 0")

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "synth"}
        d["synth"] = self.synth.to_dict()
        return d

    @staticmethod
    def load(path) -> "ProjectConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise UserError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise UserError(f"{path}: invalid JSON ({e})") from None
        return ProjectConfig.from_dict(raw, base=path.parent)

    @staticmethod
    def from_dict(raw: dict, base=None) -> "ProjectConfig":
        raw = dict(raw)
        known = set(ProjectConfig.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise UserError(f"unknown config fields {sorted(unknown)}")
        try:
            synth = SynthConfig.from_dict(raw.pop("synth", {}))
        except (TypeError, ValueError) as e:
            raise UserError(f"bad synthesis settings: {e}") from None
        if base is not None and raw.get("theory") and not Path(raw["theory"]).is_absolute():
            raw["theory"] = str(Path(base) / raw["theory"])
        return ProjectConfig(synth=synth, **raw)


@dataclass
class RunManifest:
    config: dict
    seeds: list[int]
    artifacts: list[str]
    models: list[dict]
    started: str
    finished: str
    version: str = __version__
    command: list[str] = field(default_factory=list)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2))
        return path


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _output_dir(flag: Optional[str], default: str) -> Path:
    env = os.environ.get(OUTPUT_ENV)
    out = Path(flag or env or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_batch(items) -> dict[str, int]:
    out = {}
    for item in items or []:
        for part in item.split(","):
            if not part:
                continue
            try:
                s, n = part.split("=")
                out[s.strip()] = int(n)
            except ValueError:
                raise UserError(f"batch sizes take the form sort=n, got {part!r}") from None
    return out


def _parse_sorts(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        try:
            v, s = item.split("=")
        except ValueError:
            raise UserError(f"sort assignments take the form var=sort, got {item!r}") from None
        out[v.strip()] = s.strip()
    return out


def _load_theory(path) -> tuple[TheoryFile, object]:
    path = Path(path)
    if not path.exists():
        raise UserError(f"theory file not found: {path}")
    tf = load_theory_file(path)
    delta = load_binding(tf.sort_data, path.parent, tf.signature)
    return tf, delta


def _theory_for_model(model_path: Path, theory_flag: Optional[str]):
    if theory_flag:
        return _load_theory(theory_flag)
    info = read_manifest(model_path)
    if "theory" not in info:
        raise UserError(f"{model_path} does not record its theory; pass --theory")
    theory = Path(info["theory"])
    if not theory.is_absolute():
        theory = model_path.parent / theory
    return _load_theory(theory)


def _load_model(path, tf: TheoryFile):
    path = Path(path)
    if not path.exists():
        raise UserError(f"model file not found: {path}")
    return load_model(path, tf.signature, tf.theory)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = ProjectConfig.load(args.config) if args.config else ProjectConfig()
    if args.theory:
        cfg.theory = args.theory
    if cfg.theory is None:
        raise UserError("no theory file given (positional argument or config 'theory')")
    synth = cfg.synth.to_dict()
    for flag, key in (("epochs", "max_epochs"), ("patience", "patience"), ("min_likelihood", "min_likelihood"),
                      ("trials", "max_trials"), ("lr", "learning_rate"), ("seed", "seed")):
        v = getattr(args, flag)
        if v is not None:
            synth[key] = v
    if args.models is not None:
        cfg.models = args.models
    if args.workers is not None:
        cfg.workers = args.workers
    batch = _parse_batch(args.batch)
    if batch:
        synth["train_batch"] = dict(synth["train_batch"], batch=batch)
        synth["eval_batch"] = dict(synth["eval_batch"], batch=batch)
    try:
        cfg.synth = SynthConfig.from_dict(synth)
    except (TypeError, ValueError) as e:
        raise UserError(f"bad synthesis settings: {e}") from None
    tf, delta = _load_theory(cfg.theory)
    out = _output_dir(args.out, cfg.output_dir)
    started = _now()
    results = sample_models(tf.theory, tf.signature, delta, cfg.synth, cfg.models, cfg.n_workers,
                            raise_on_failure=False)
    status = EXIT_OK
    if not any(r.accepted for r in results):
        print(f"synthesis failed: no model reached likelihood {cfg.synth.min_likelihood} with all axioms "
              f"inside their intervals (best {results[0].likelihood:.4f})", file=sys.stderr)
        status = EXIT_SYNTH
    theory_path = str(Path(cfg.theory).resolve())
    artifacts = []
    rows = []
    for rank, res in enumerate(results):
        name = f"model_{res.seed}{MODEL_SUFFIX}"
        save_model(res.params, out / name, {"theory": theory_path, "rank": rank, **res.summary()})
        artifacts.append(name)
        rows.append({"rank": rank, "file": name, "seed": res.seed, "trial": res.trial,
                     "likelihood": res.likelihood, "feasible": res.feasible, "accepted": res.accepted,
                     "epochs": len(res.history)})
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    artifacts.append("summary.csv")
    RunManifest(cfg.to_dict(), [cfg.synth.seed + i for i in range(cfg.models)], artifacts,
                [r.summary() for r in results], started, _now(), command=sys.argv[1:]).write(out / "manifest.json")
    for r in rows:
        print(f"{r['file']}  likelihood {r['likelihood']:.4f}  feasible {r['feasible']}  accepted {r['accepted']}")
    print(f"wrote {len(results)} model(s) to {out}")
    return status


def _formulas(args, tf: TheoryFile):
    if args.axioms:
        return tf.theory, None
    texts = []
    if args.formula:
        texts.append(args.formula)
    if args.file:
        p = Path(args.file)
        if not p.exists():
            raise UserError(f"formula file not found: {p}")
        texts += [ln.strip().rstrip(";") for ln in p.read_text().splitlines()
                  if ln.strip() and not ln.strip().startswith("#")]
    if not texts:
        raise UserError("give a formula, --file or --axioms")
    return [parse_formula(t, tf.signature, "<formula>") for t in texts], texts


def cmd_validate(args) -> int:
    model_path = Path(args.model)
    tf, delta = _theory_for_model(model_path, args.theory)
    params = _load_model(model_path, tf)
    modes = [parse_mode(m, args.tau) for m in args.mode.split(",")]
    spec = BatchSpec(_parse_batch(args.batch), sample_size=args.samples, seed=args.seed)
    formulas, names = _formulas(args, tf)
    weights = axiom_weights(tf.theory, params) if isinstance(formulas, Theory) else None
    report = validate(params, formulas, delta, spec, tf.signature, modes, weights=weights, names=names)
    if args.json:
        print(report.to_json())
    else:
        print(report.to_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    model_path = Path(args.model)
    tf, delta = _theory_for_model(model_path, args.theory)
    params = _load_model(model_path, tf)
    term = parse_formula(args.term, tf.signature, "<term>")
    out = _output_dir(args.out, ".")
    mode = parse_mode(args.mode, args.tau)
    tensor = evaluate(params, term, delta, tf.signature, _parse_sorts(args.sort), mode, args.cell_cap)
    stem = args.name
    tensor.to_csv(out / f"{stem}.csv")
    written = [f"{stem}.csv"]
    if args.hist:
        if not tensor.is_formula:
            raise UserError("histograms need a formula, not a proper term")
        histogram(tensor.values, args.hist).to_csv(out / f"{stem}_hist.csv")
        written.append(f"{stem}_hist.csv")
    if args.export == "dot":
        if not (tensor.is_formula and tensor.values.ndim == 2 and tensor.sorts[0] == tensor.sorts[1]):
            raise UserError("DOT export needs a formula with two free variables of one sort")
        edges = _edges_from_tensor(tensor, args.threshold, args.drop_isolated)
        edges.to_dot(out / f"{stem}.dot", stem)
        written.append(f"{stem}.dot")
    print(f"tensor shape {tensor.shape}; wrote {', '.join(written)} to {out}")
    return EXIT_OK


def _edges_from_tensor(tensor, threshold, drop_isolated):
    from .analysis import EdgeList, _incident

    labels = tensor.labels[0]
    v = tensor.values
    edges = [(labels[i], labels[j], float(v[i, j])) for i, j in zip(*np.nonzero(v >= threshold))]
    return EdgeList(edges, threshold, _incident(edges) if drop_isolated else list(labels))


def _read_annotation(path) -> dict:
    out = {}
    with Path(path).open(newline="") as fh:
        for row in csv.reader(fh):
            if len(row) >= 2 and not row[0].startswith("#"):
                try:
                    out[row[0]] = float(row[1])
                except ValueError:
                    continue
    return out


def cmd_export(args) -> int:
    model_path = Path(args.model)
    tf, delta = _theory_for_model(model_path, args.theory)
    params = _load_model(model_path, tf)
    out = _output_dir(args.out, ".")
    edges = extract_relation(params, args.predicate, delta, tf.signature, args.threshold, args.drop_isolated,
                             args.sort)
    stem = args.name or args.predicate
    written = []
    if args.format in ("dot", "both"):
        ann = None
        if args.annotate:
            raw = _read_annotation(args.annotate)
            ann = {n: raw[str(n)] for n in edges.nodes if str(n) in raw}
        edges.to_dot(out / f"{stem}.dot", stem, ann)
        written.append(f"{stem}.dot")
    if args.format in ("csv", "both"):
        edges.to_csv(out / f"{stem}.csv")
        written.append(f"{stem}.csv")
    print(f"{len(edges)} edges at threshold {args.threshold}; wrote {', '.join(written)} to {out}")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .demo import DemoConfig, demo_synth_config, run_demo

    dcfg = DemoConfig(n=args.n, seed=args.seed)
    scfg = demo_synth_config(seed=args.seed, max_epochs=args.epochs)
    out = _output_dir(args.out, "palo_demo")
    summary = run_demo(dcfg, scfg, args.models, out, workers=args.workers)
    print(summary.to_text(), end="")
    (out / "demo_summary.json").write_text(json.dumps(summary.as_dict(), indent=2))
    return EXIT_OK if summary.any_accepted else EXIT_SYNTH


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="palo", description="Probabilistic logic model synthesis and analysis.")
    p.add_argument("--version", action="version", version=f"palo {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize models of a theory")
    s.add_argument("theory", nargs="?", help=".palo theory file (or set 'theory' in --config)")
    s.add_argument("--config", help="JSON project config")
    s.add_argument("--models", type=int, help="number of models to sample")
    s.add_argument("--workers", type=int, help="worker processes (default: CPU count)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--min-likelihood", type=float)
    s.add_argument("--trials", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch", action="append", help="per-sort batch sizes, e.g. gene=15,lidata=60")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help=f"output directory (else ${OUTPUT_ENV} or the config)")
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("validate", help="mean probabilities of formulas over sampled bindings")
    v.add_argument("model")
    v.add_argument("formula", nargs="?")
    v.add_argument("--theory", help="theory file (default: the one recorded with the model)")
    v.add_argument("--file", help="file with one formula per line")
    v.add_argument("--axioms", action="store_true", help="validate every axiom of the theory")
    v.add_argument("--mode", default="approx", help="comma-separated: approx, bounds, crisp")
    v.add_argument("--tau", type=float, default=0.5)
    v.add_argument("--samples", type=int, default=100)
    v.add_argument("--batch", action="append")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("eval", help="exhaustive evaluation over all elements of the free variables' sorts")
    e.add_argument("model")
    e.add_argument("term")
    e.add_argument("--theory")
    e.add_argument("--sort", action="append", help="var=sort for free variables")
    e.add_argument("--mode", default="approx")
    e.add_argument("--tau", type=float, default=0.5)
    e.add_argument("--export", choices=["csv", "dot"], default="csv")
    e.add_argument("--threshold", type=float, default=0.7)
    e.add_argument("--drop-isolated", action="store_true")
    e.add_argument("--hist", type=int, nargs="?", const=DEFAULT_BINS, default=0, help="histogram bins")
    e.add_argument("--cell-cap", type=int, default=DEFAULT_CELL_CAP)
    e.add_argument("--name", default="tensor")
    e.add_argument("--out")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="extract a binary relation as DOT and/or CSV")
    x.add_argument("model")
    x.add_argument("predicate")
    x.add_argument("--theory")
    x.add_argument("--sort")
    x.add_argument("--threshold", type=float, default=0.7)
    x.add_argument("--drop-isolated", action="store_true")
    x.add_argument("--format", choices=["dot", "csv", "both"], default="both")
    x.add_argument("--annotate", help="CSV of node id, scalar in [-1, 1] for node colors")
    x.add_argument("--name")
    x.add_argument("--out")
    x.add_argument("--seed", type=int, default=0)
    x.set_defaults(func=cmd_export)

    d = sub.add_parser("demo", help="synthetic causal-network pipeline end to end")
    d.add_argument("--n", type=int, default=30)
    d.add_argument("--models", type=int, default=20)
    d.add_argument("--epochs", type=int)
    d.add_argument("--workers", type=int)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CellCapExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except (UserError, ParseError, WellFormednessError, DataError, BatchLargerThanSort, FormatError, ShapeMismatch,
            NonBinaryPredicate, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
