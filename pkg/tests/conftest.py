import numpy as np
import pytest
from hypothesis import strategies as st

from palo.logic import (
    And,
    Bottom,
    Const,
    Exists,
    Forall,
    FunApp,
    Iff,
    Implies,
    Mean,
    Not,
    Or,
    PredApp,
    PropConst,
    Signature,
    Top,
    TypeSignature,
    Var,
)

ATOMS = ("a", "b", "c", "d")


def small_signature(props=ATOMS, K=3, dim=2) -> Signature:
    """One data type T, unary p and r, binary q, f: T -> T, constant c0."""
    ts = TypeSignature(frozenset({"T"}), {"T": dim}, default_complexity=K)
    return Signature(
        ts,
        constants={"c0": "T"},
        functions={"f": (("T",), "T")},
        propositions=frozenset(props),
        predicates={"p": ("T",), "r": ("T",), "q": ("T", "T")},
        sorts={"s": ("T",), "ps": ("T", "T")},
    )


def gene_signature(K=4, dim=3) -> Signature:
    ts = TypeSignature(frozenset({"Gene"}), {"Gene": dim}, default_complexity=K)
    return Signature(
        ts,
        predicates={"li": ("Gene", "Gene"), "co": ("Gene", "Gene"), "di": ("Gene", "Gene"), "im": ("Gene", "Gene"),
                    "g": ("Gene",)},
        sorts={"gene": ("Gene",), "lidata": ("Gene", "Gene")},
    )


@pytest.fixture
def sig():
    return small_signature()


# ---------------------------------------------------------------------------
# formula strategies
# ---------------------------------------------------------------------------

BINARY = (And, Or, Implies, Iff)


def prop_trees(atoms=ATOMS, max_leaves=12):
    """Quantifier-free formulas over propositional constants."""
    leaf = st.one_of(st.sampled_from([PropConst(a) for a in atoms]), st.just(Top()), st.just(Bottom()))
    return st.recursive(
        leaf,
        lambda kids: st.one_of(
            kids.map(Not),
            st.tuples(st.sampled_from(BINARY), kids, kids).map(lambda t: t[0](t[1], t[2])),
        ),
        max_leaves=max_leaves,
    )


@st.composite
def first_order(draw, depth=3, scope=(), quantifiers=(Forall, Exists, Mean)):
    """Closed (relative to ``scope``) formulas over the small signature."""
    names = "xyzuvw"

    def proper():
        choices = [Const("c0")] + [Var(v) for v in scope]
        base = draw(st.sampled_from(choices))
        if draw(st.booleans()) and draw(st.booleans()):
            return FunApp("f", (base,))
        return base

    if depth <= 0 or draw(st.integers(0, 3)) == 0:
        kind = draw(st.sampled_from(["p", "r", "q", "prop", "const"]))
        if kind in ("p", "r"):
            return PredApp(kind, (proper(),))
        if kind == "q":
            return PredApp("q", (proper(), proper()))
        if kind == "prop":
            return PropConst(draw(st.sampled_from(ATOMS)))
        return draw(st.sampled_from([Top(), Bottom()]))
    kind = draw(st.sampled_from(["not", "bin", "bin", "quant"]))
    if kind == "not":
        return Not(draw(first_order(depth - 1, scope, quantifiers)))
    if kind == "bin":
        op = draw(st.sampled_from(BINARY))
        return op(draw(first_order(depth - 1, scope, quantifiers)), draw(first_order(depth - 1, scope, quantifiers)))
    free = [n for n in names if n not in scope]
    var = free[0] if free else names[0] + str(len(scope))
    q = draw(st.sampled_from(quantifiers))
    return q(var, "s", draw(first_order(depth - 1, scope + (var,), quantifiers)))


def random_params(sig, seed=0, scale=1.0):
    from palo.grounding import InitConfig, init_params

    return init_params(sig, None, InitConfig(seed, scale))


def elements(n, dim=2, seed=0):
    return np.random.default_rng(seed).normal(size=(n, dim))


# ---------------------------------------------------------------------------
# acceptance report
# ---------------------------------------------------------------------------

ACCEPTANCE: dict[str, str] = {}


def record(criterion: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abcdef")), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
