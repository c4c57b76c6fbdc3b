import math

import numpy as np
import pytest

from conftest import gene_signature, small_signature
from palo import autodiff as ad
from palo.grounding import InitConfig, init_params
from palo.parser import parse_formula
from palo.semantics import (
    APPROX,
    BOUNDS,
    MeanQuantifierNotSupported,
    NonDifferentiableMode,
    TableInterpretation,
    UnboundSort,
    UnboundVariable,
    backward,
    compile,
    crisp,
    curriculum,
    eval_abstract_classical,
    eval_approx,
    eval_bounds,
    eval_crisp,
    parse_mode,
    run_graph,
)

SIG = small_signature()


def G(text, sig=SIG):
    return compile(parse_formula(text, sig), sig)


def props(**vals):
    return TableInterpretation(propositions=vals)


class TestApprox:
    def test_contradiction_and_idempotence(self):
        m = props(a=0.5)
        assert eval_approx(G("a & ~a"), m, {}) == 0.25
        assert eval_approx(G("a & a"), m, {}) == 0.25

    def test_implication(self):
        assert eval_approx(G("a => b"), props(a=0.6, b=0.7), {}) == pytest.approx(0.82, abs=1e-15)

    def test_connectives(self):
        m = props(a=0.3, b=0.8)
        assert eval_approx(G("~a"), m, {}) == pytest.approx(0.7)
        assert eval_approx(G("a | b"), m, {}) == pytest.approx(0.3 + 0.8 - 0.24)
        assert eval_approx(G("a <=> b"), m, {}) == pytest.approx(1 - 0.3 - 0.8 + 2 * 0.24)
        assert eval_approx(G("true"), m, {}) == 1.0
        assert eval_approx(G("false"), m, {}) == 0.0

    def test_quantifiers(self):
        m = TableInterpretation(predicates={"p": [0.25, 1.0], "r": [0.2, 0.9]})
        b = {"s": np.array([[0], [1]])}
        assert eval_approx(G("forall x:s . p(x)"), m, b) == pytest.approx(0.5, abs=1e-15)
        assert eval_approx(G("exists x:s . r(x)"), m, b) == 0.9
        assert eval_approx(G("mean x:s . p(x)"), m, b) == 0.625

    def test_functions_and_constants(self):
        m = TableInterpretation(predicates={"p": [0.1, 0.2, 0.3]}, functions={"f": [1, 2, 0]}, constants={"c0": 0})
        assert eval_approx(G("p(f(f(c0)))"), m, {}) == 0.3

    def test_lambda_vector(self):
        m = TableInterpretation(predicates={"p": [0.25, 1.0, 0.5]})
        out = eval_approx(G("\\x:s . p(x)"), m, {"s": np.array([[2], [0]])})
        np.testing.assert_array_equal(out, [0.5, 0.25])

    def test_unbound(self):
        m = TableInterpretation(predicates={"p": [0.25, 1.0]})
        with pytest.raises(UnboundSort):
            eval_approx(G("forall x:s . p(x)"), m, {})
        g = compile(parse_formula("p(x)", SIG), SIG)
        with pytest.raises(UnboundVariable):
            eval_approx(g, m, {})
        assert eval_approx(g, m, {}, {"x": [1]}) == 1.0


class TestBounds:
    def test_point_atom_contradiction(self):
        assert tuple(eval_bounds(G("a & ~a"), props(a=0.5), {})) == (0.0, 0.25, 0.5)

    def test_vacuous_atom_contradiction(self):
        assert tuple(eval_bounds(G("a & ~a"), props(a=(0.0, 0.5, 1.0)), {})) == (0.0, 0.25, 1.0)

    def test_conjunction(self):
        l, a, u = eval_bounds(G("a & b"), props(a=0.6, b=0.7), {})
        assert (l, a, u) == (pytest.approx(0.3), pytest.approx(0.42), 0.6)

    def test_constants(self):
        assert tuple(eval_bounds(G("true"), props(), {})) == (1.0, 1.0, 1.0)
        assert tuple(eval_bounds(G("false"), props(), {})) == (0.0, 0.0, 0.0)

    def test_iff_upper_clipped(self):
        l, a, u = eval_bounds(G("a <=> b"), props(a=0.5, b=0.5), {})
        assert u == 1.0 and l <= a <= u

    def test_quantified_sandwich(self):
        m = TableInterpretation(predicates={"p": [0.25, 0.9, 0.6], "q": np.random.default_rng(0).random((3, 3))})
        b = {"s": np.array([[0], [1], [2]])}
        l, a, u = eval_bounds(G("forall x:s . exists y:s . q(x,y) & ~p(y) | p(x)"), m, b)
        assert 0 <= l <= a <= u <= 1


class TestCrisp:
    def test_threshold(self):
        assert eval_crisp(G("a"), props(a=0.7), {}) == 1.0
        assert eval_crisp(G("a"), props(a=0.3), {}) == 0.0

    def test_contradiction_nodewise(self):
        # a=0.5 crisps to 1, so ~a crisps to 0 and the conjunction to 0
        assert eval_crisp(G("a & ~a"), props(a=0.5), {}) == 0.0

    def test_classical_universal(self):
        m = TableInterpretation(predicates={"p": [1.0, 0.9, 0.2]})
        b = {"s": np.array([[0], [1], [2]])}
        assert eval_crisp(G("forall x:s . p(x)"), m, b) == 0.0
        assert eval_crisp(G("mean x:s . p(x)"), m, b) == 1.0  # 2/3 crisps to 1
        assert eval_crisp(G("mean x:s . p(x)"), m, b, tau=0.7) == 0.0

    def test_parse_mode(self):
        assert parse_mode("crisp(0.3)") == crisp(0.3)
        assert parse_mode("bounds") == BOUNDS
        assert parse_mode("curriculum(4)") == curriculum(4)
        with pytest.raises(ValueError):
            parse_mode("fuzzy")
        with pytest.raises(ValueError):
            crisp(1.5)


class TestAbstract:
    def setup_method(self):
        self.sig = gene_signature()
        li = np.zeros((2, 2))
        li[0, 1] = 1.0
        self.m = TableInterpretation(predicates={"li": li})
        self.b = {"gene": np.array([[0], [1]])}

    def test_witness(self):
        assert eval_abstract_classical(parse_formula("exists i,j:gene . li(i,j)", self.sig), self.m, self.b) == 1

    def test_reflexive(self):
        assert eval_abstract_classical(parse_formula("forall i:gene . li(i,i)", self.sig), self.m, self.b) == 0

    def test_excluded_middle(self):
        for v in (0.0, 1.0):
            assert eval_abstract_classical(parse_formula("a | ~a", SIG), props(a=v), {}) == 1

    def test_mean_rejected(self):
        with pytest.raises(MeanQuantifierNotSupported):
            eval_abstract_classical(parse_formula("mean i:gene . li(i,i)", self.sig), self.m, self.b)

    def test_non_boolean_rejected(self):
        with pytest.raises(ValueError, match="non-Boolean"):
            eval_abstract_classical(parse_formula("a", SIG), props(a=0.5), {})


class TestCurriculum:
    def test_monotone_in_exponent(self):
        rng = np.random.default_rng(1)
        vals = np.sort(rng.uniform(0.05, 0.6, 49))
        vals = np.append(vals, 0.95)  # unique maximum, well separated
        m = TableInterpretation(predicates={"p": vals})
        b = {"s": np.arange(50)[:, None]}
        g = G("exists x:s . p(x)")
        outs = [float(run_graph(g, m, b, mode=curriculum(k)).numpy()) for k in (1, 2, 8, 64)]
        assert outs == sorted(outs)
        assert outs[0] == pytest.approx(vals.mean())
        # max * n^(-1/k) <= power mean <= max, the tightest bracket for one maximal element
        assert 0.95 * 50 ** (-1 / 64) - 1e-12 <= outs[-1] <= 0.95
        assert float(run_graph(g, m, b, mode=APPROX).numpy()) == 0.95

    def test_close_to_max_on_small_batches(self):
        m = TableInterpretation(predicates={"p": [0.3, 0.5, 0.95]})
        b = {"s": np.arange(3)[:, None]}
        out = float(run_graph(G("exists x:s . p(x)"), m, b, mode=curriculum(64)).numpy())
        assert abs(out - 0.95) < 0.02


class TestBackward:
    def test_constant_has_zero_gradient(self):
        th = init_params(SIG, None, InitConfig(0))
        grads = backward(G("true"), th, {})
        assert all(not np.any(v) for v in grads.values())

    def test_crisp_not_differentiable(self):
        th = init_params(SIG, None, InitConfig(0))
        with pytest.raises(NonDifferentiableMode):
            backward(G("a"), th, {}, mode=crisp(0.5))

    def test_predicate_finite_difference(self):
        th = init_params(SIG, None, InitConfig(4, 2.0))
        g = G("q(c0, f(c0))")
        grads = backward(g, th, {})
        h = 1e-4
        for key in ("pred:q:W", "fun:f:V", "const:c0"):
            for idx in list(np.ndindex(th[key].shape))[:6]:
                plus, minus = th.copy(), th.copy()
                plus.arrays[key][idx] += h
                minus.arrays[key][idx] -= h
                num = (eval_approx(g, plus, {}) - eval_approx(g, minus, {})) / (2 * h)
                assert grads[key][idx] == pytest.approx(num, rel=1e-4, abs=1e-9)

    def test_universal_gradient(self):
        n, p = 5, 0.4
        x = ad.Tensor(np.full(n, p), requires_grad=True)
        out = ad.geometric_mean(x, axis=0, floor=1e-7)
        out.backward()
        np.testing.assert_allclose(x.grad, out.value / (n * p), rtol=1e-12)


def test_vector_and_table_predicates_agree():
    sig = small_signature()
    th = init_params(sig, None, InitConfig(2))
    elems = np.random.default_rng(0).normal(size=(4, 2))
    b = {"s": elems}
    g = G("forall x:s . exists y:s . q(x,y) => p(f(y))")
    direct = eval_approx(g, th, b)
    from palo.grounding import eval_function, eval_predicate

    q = eval_predicate(th, sig, "q", np.concatenate([np.repeat(elems, 4, 0), np.tile(elems, (4, 1))], 1)).reshape(4, 4)
    pf = eval_predicate(th, sig, "p", eval_function(th, sig, "f", elems))
    inner = (q * pf[None, :] - q + 1).max(axis=1)
    assert direct == pytest.approx(math.exp(np.log(inner).mean()), abs=1e-12)
