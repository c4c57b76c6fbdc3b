"""Learnable interpretations of constants, functions, propositions and predicates.

All parameters live in a flat :class:`ParamStore` keyed by strings::

    const:<c>            a_c              (D(T),)
    fun:<f>:V, fun:<f>:b V_f, b_f         (D(T), L(f)), (D(T),)
    prop:<g>             raw a_g          ()        a_g = sigmoid(raw)
    pred:<p>:W|V|b|U     NTN parameters   (K,L,L), (K,L), (K,), (K,)
    weight:<i>           raw r_i          ()        r_i = softplus(raw)
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .logic import Signature, Theory

MAGIC = b"PALOMDL\x00"
FORMAT_VERSION = 1
WEIGHT_INIT = math.log(math.e - 1.0)  # softplus(WEIGHT_INIT) == 1


class ShapeMismatch(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class InitConfig:
    seed: int = 0
    scale: float = 1.0
    scheme: str = "normal-scaled"  # or "uniform-scaled"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("init scale must be positive")
        if self.scheme not in ("normal-scaled", "uniform-scaled"):
            raise ValueError(f"unknown init scheme {self.scheme!r}")


@dataclass
class ParamStore:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in self.arrays.items()}

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    def __setitem__(self, key: str, value):
        self.arrays[key] = np.asarray(value, dtype=np.float64)

    def __contains__(self, key: str) -> bool:
        return key in self.arrays

    def keys(self):
        return self.arrays.keys()

    def items(self):
        return self.arrays.items()

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.arrays.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.arrays.values()]) if self.arrays else np.zeros(0)

    def equal(self, other: "ParamStore") -> bool:
        if list(self.arrays) != list(other.arrays):
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.arrays.values(), other.arrays.values())
        )

    def weight(self, i: int, fixed: Optional[float] = None) -> float:
        if fixed is not None:
            return fixed
        return float(np.logaddexp(0.0, self.arrays[f"weight:{i}"]))


def expected_shapes(sig: Signature, theory: Optional[Theory] = None) -> dict[str, tuple]:
    """Tensor shape for every parameter key, in a fixed order."""
    shapes: dict[str, tuple] = {}
    dim = sig.dim
    for c in sorted(sig.constants):
        shapes[f"const:{c}"] = (dim[sig.constants[c]],)
    for f in sorted(sig.functions):
        dom, cod = sig.functions[f]
        L = sig.width(dom)
        shapes[f"fun:{f}:V"] = (dim[cod], L)
        shapes[f"fun:{f}:b"] = (dim[cod],)
    for g in sorted(sig.propositions):
        shapes[f"prop:{g}"] = ()
    for p in sorted(sig.predicates):
        dom = sig.predicates[p]
        L = sig.width(dom)
        K = sig.type_sig.K(dom)
        shapes[f"pred:{p}:W"] = (K, L, L)
        shapes[f"pred:{p}:V"] = (K, L)
        shapes[f"pred:{p}:b"] = (K,)
        shapes[f"pred:{p}:U"] = (K,)
    if theory is not None:
        for i, ax in enumerate(theory.axioms):
            if ax.flexible:
                shapes[f"weight:{i}"] = ()
    return shapes


def _fan_in(key: str, shape: tuple) -> int:
    if key.endswith(":W"):
        return max(1, shape[1] * shape[2])
    if key.endswith(":V"):
        return max(1, shape[-1])
    if key.endswith(":U"):
        return max(1, shape[0])
    return 1


def init_params(sig: Signature, theory: Optional[Theory] = None, cfg: Optional[InitConfig] = None) -> ParamStore:
    """Allocate and randomly initialize all parameters.

    Weights ~ N(0, scale/sqrt(fan_in)) (or the uniform law with equal variance);
    biases start at zero, propositional constants at 0.5 and flexible axiom
    weights at r = 1.
    """
    cfg = cfg or InitConfig()
    rng = np.random.default_rng(cfg.seed)
    store = ParamStore()
    for key, shape in expected_shapes(sig, theory).items():
        if key.startswith("weight:"):
            store[key] = np.array(WEIGHT_INIT)
        elif key.startswith("prop:") or key.endswith(":b"):
            store[key] = np.zeros(shape)
        else:
            std = cfg.scale / math.sqrt(_fan_in(key, shape))
            if cfg.scheme == "normal-scaled":
                store[key] = rng.normal(0.0, std, size=shape)
            else:
                half = math.sqrt(3.0) * std
                store[key] = rng.uniform(-half, half, size=shape)
    return store


def check_shapes(params: ParamStore, sig: Signature, theory: Optional[Theory] = None):
    expected = expected_shapes(sig, theory)
    for key, shape in expected.items():
        if key not in params:
            raise ShapeMismatch(f"missing parameter {key}")
        if tuple(params[key].shape) != shape:
            raise ShapeMismatch(f"parameter {key} has shape {params[key].shape}, expected {shape}")
    extra = set(params.keys()) - set(expected)
    if extra:
        raise ShapeMismatch(f"unexpected parameters {sorted(extra)}")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def eval_function(params: ParamStore, sig: Signature, f: str, v) -> np.ndarray:
    """A(f)(v) = V_f v + b_f."""
    V, b = params[f"fun:{f}:V"], params[f"fun:{f}:b"]
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (V.shape[1],):
        raise ShapeMismatch(f"{f} expects vectors of length {V.shape[1]}, got shape {v.shape}")
    return v @ V.T + b


def eval_predicate(params: ParamStore, sig: Signature, p: str, v) -> np.ndarray:
    """A(p)(v) = sigmoid(U^T tanh(v^T W[1:K] v + V v + b)) for v of shape (..., L)."""
    W, V, b, U = (params[f"pred:{p}:{k}"] for k in "WVbU")
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1:] != (W.shape[1],):
        raise ShapeMismatch(f"{p} expects vectors of length {W.shape[1]}, got shape {v.shape}")
    bilinear = np.einsum("...l,klm,...m->...k", v, W, v)
    return _sigmoid(np.tanh(bilinear + v @ V.T + b) @ U)


def eval_proposition(params: ParamStore, g: str) -> float:
    return float(_sigmoid(params[f"prop:{g}"]))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_model(params: ParamStore, path, manifest: Optional[dict] = None) -> Path:
    """Write ``path`` (binary) and ``path`` + ``.json`` (shape manifest)."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.arrays))]
    for key, arr in params.items():
        name = key.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<H", len(name)))
        chunks.append(name)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    info = dict(manifest or {})
    info.update(
        {
            "format": "palomodel",
            "version": FORMAT_VERSION,
            "arrays": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        }
    )
    Path(str(path) + ".json").write_text(json.dumps(info, indent=2))
    return path


def read_manifest(path) -> dict:
    side = Path(str(path) + ".json")
    return json.loads(side.read_text()) if side.exists() else {}


def load_model(path, sig: Optional[Signature] = None, theory: Optional[Theory] = None) -> ParamStore:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated model file {path}")
        out = data[pos : pos + n]
        pos += n
        return out

    if take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path} is not a palo model file")
    version, count = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    store = ParamStore()
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        key = take(n).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        store[key] = arr
    if pos != len(data):
        raise FormatError(f"trailing bytes in model file {path}")
    if sig is not None:
        check_shapes(store, sig, theory)
    return store
