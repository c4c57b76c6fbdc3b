import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import first_order, gene_signature, prop_trees, small_signature
from palo.logic import (
    And,
    Axiom,
    Forall,
    Iff,
    Implies,
    Mean,
    Not,
    Or,
    PredApp,
    PropConst,
    Theory,
    Var,
    alpha_key,
    free_vars,
)
from palo.parser import (
    DataSource,
    LexError,
    ParseError,
    TheoryFile,
    parse_formula,
    parse_theory_file,
    pretty,
    pretty_theory_file,
    tokenize,
)

GENE_HEADER = """
type Gene : 3;
sort gene : Gene;
sort lidata : Gene Gene;
pred li : Gene Gene;
pred co : Gene Gene;
"""


def squash(text):
    return re.sub(r"\s+", " ", text).strip()


class TestTheoryFile:
    def test_data_axiom(self):
        tf = parse_theory_file(GENE_HEADER + "axiom [0.65,0.75] forall p:lidata . li(p);", require_bindings=False)
        (ax,) = tf.theory.axioms
        assert (ax.lower, ax.upper, ax.flexible) == (0.65, 0.75, True)
        assert ax.formula == Forall("p", "lidata", PredApp("li", (Var("p"),)))

    def test_default_interval(self):
        tf = parse_theory_file(GENE_HEADER + "axiom forall i:gene . co(i,i);", require_bindings=False)
        ax = tf.theory.axioms[0]
        assert (ax.lower, ax.upper) == (0.0, 1.0)

    def test_interval_order(self):
        with pytest.raises(ParseError, match="interval lower exceeds upper") as e:
            parse_theory_file(GENE_HEADER + "axiom [0.9,0.8] forall i:gene . co(i,i);", require_bindings=False)
        d = e.value.diagnostics[0]
        assert d.span.line == 7

    def test_weight_name_and_bindings(self):
        text = GENE_HEADER + 'bind gene = csv("genes.csv");\nbind lidata = csv("li.csv", index=gene);\n'
        text += "param batch = 15;\naxiom refl: [0,1] weight 2.5 forall i:gene . ~li(i,i);"
        tf = parse_theory_file(text)
        assert tf.sort_data["lidata"] == DataSource("csv", "li.csv", "gene")
        assert tf.hyper == {"batch": 15.0}
        ax = tf.theory.axioms[0]
        assert ax.name == "refl" and ax.weight == 2.5

    def test_missing_binding(self):
        with pytest.raises(ParseError):
            parse_theory_file(GENE_HEADER + "axiom forall i:gene . co(i,i);")

    def test_duplicate_declaration(self):
        with pytest.raises(ParseError) as e:
            parse_theory_file(GENE_HEADER + "pred li : Gene;", require_bindings=False)
        assert "DuplicateDeclaration" in e.value.kinds

    def test_type_errors_carry_spans(self):
        with pytest.raises(ParseError) as e:
            parse_theory_file(GENE_HEADER + "axiom forall i:gene .\n   li(i);", require_bindings=False)
        d = e.value.diagnostics[0]
        assert d.kind == "TypeError" and "ArityMismatch" in d.message
        assert d.span is not None and d.span.line >= 7

    def test_lex_error_span(self):
        with pytest.raises(LexError) as e:
            tokenize("pred p : T;\n  $")
        span = e.value.diagnostics[0].span
        assert (span.line, span.column) == (2, 3)

    def test_syntax_error_span(self):
        with pytest.raises(ParseError) as e:
            parse_theory_file(GENE_HEADER + "axiom forall i:gene . co(i,i)", require_bindings=False)
        assert e.value.kinds == ["SyntaxError"]

    def test_keywords_reserved(self):
        with pytest.raises(ParseError):
            parse_theory_file("type T : 1; pred mean : T;")


class TestFormula:
    def setup_method(self):
        self.sig = gene_signature()

    def test_multi_binder(self):
        t = parse_formula("forall i,j:gene . im(i,j) => di(i,j)", self.sig)
        assert isinstance(t, Forall) and isinstance(t.body, Forall) and isinstance(t.body.body, Implies)
        assert t.sort == t.body.sort == "gene"

    def test_mean_pair(self):
        t = parse_formula("mean i,j:gene . im(i,j)", self.sig)
        assert isinstance(t, Mean) and isinstance(t.body, Mean) and free_vars(t) == set()

    def test_open_term(self):
        t = parse_formula("exists j:gene . di(i,j) & di(j,k)", self.sig)
        assert free_vars(t) == {"i", "k"}

    def test_body_extends_right(self):
        sig = small_signature()
        t = parse_formula("forall x:s . p(x) & a => b", sig)
        assert isinstance(t, Forall) and isinstance(t.body, Implies)
        t = parse_formula("a & forall x:s . p(x) | b", sig)
        assert isinstance(t, And) and isinstance(t.right, Forall) and isinstance(t.right.body, Or)

    @pytest.mark.parametrize(
        "text,expected",
        [
            ("a | b & c", Or(PropConst("a"), And(PropConst("b"), PropConst("c")))),
            ("~a & b", And(Not(PropConst("a")), PropConst("b"))),
            ("a => b => c", Implies(PropConst("a"), Implies(PropConst("b"), PropConst("c")))),
            ("a <=> b <=> c", Iff(Iff(PropConst("a"), PropConst("b")), PropConst("c"))),
            ("a & b | c", Or(And(PropConst("a"), PropConst("b")), PropConst("c"))),
            ("a | b => c <=> d", Iff(Implies(Or(PropConst("a"), PropConst("b")), PropConst("c")), PropConst("d"))),
        ],
    )
    def test_precedence_examples(self, text, expected):
        assert parse_formula(text, small_signature()) == expected


def full_parens(t):
    """Reference printer: every compound subterm parenthesized."""
    sym = {And: "&", Or: "|", Implies: "=>", Iff: "<=>"}
    if isinstance(t, PropConst):
        return t.name
    if isinstance(t, Not):
        return f"(~{full_parens(t.body)})"
    if type(t) in sym:
        return f"({full_parens(t.left)} {sym[type(t)]} {full_parens(t.right)})"
    return {"Top": "true", "Bottom": "false"}[type(t).__name__]


@settings(max_examples=500, deadline=None)
@given(prop_trees())
def test_precedence_against_reference(t):
    sig = small_signature()
    assert parse_formula(full_parens(t), sig) == t
    assert parse_formula(pretty(t), sig) == t


@settings(max_examples=300, deadline=None)
@given(first_order(depth=4))
def test_formula_roundtrip(t):
    sig = small_signature()
    back = parse_formula(pretty(t), sig)
    assert back == t
    assert pretty(back) == pretty(t)


probability = st.floats(0.0, 1.0, allow_nan=False)


@st.composite
def theory_files(draw):
    sig = small_signature(K=draw(st.integers(0, 5)), dim=draw(st.integers(1, 4)))
    formulas = draw(st.lists(first_order(depth=3), min_size=0, max_size=5, unique_by=alpha_key))
    axioms = []
    for i, f in enumerate(formulas):
        lo, hi = sorted((draw(probability), draw(probability)))
        weight = draw(st.one_of(st.none(), st.floats(0.01, 10.0)))
        name = draw(st.one_of(st.none(), st.just(f"ax{i}")))
        axioms.append(Axiom(lo, f, hi, weight, name))
    hyper = draw(st.dictionaries(st.sampled_from(["batch", "samples", "lr"]), st.floats(0, 1e3), max_size=2))
    data = {"s": DataSource("csv", "s.csv"), "ps": DataSource("csv", "ps.csv", "s")}
    return TheoryFile(sig, Theory(axioms), data, hyper)


@settings(max_examples=1000, deadline=None)
@given(theory_files())
def test_theory_roundtrip(tf):
    text = pretty_theory_file(tf)
    back = parse_theory_file(text)
    assert back.theory == tf.theory
    assert back.signature == tf.signature
    assert back.sort_data == tf.sort_data
    assert squash(pretty_theory_file(back)) == squash(text)
