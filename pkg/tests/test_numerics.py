import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from transfer_nmt import numerics as nx
from transfer_nmt.numerics import Graph, NonFiniteError, Tensor


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def leaf(data, name):
    return Tensor(np.array(data, dtype=float), requires_grad=True, name=name)


class TestMatmul:
    def test_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(nx.matmul(Tensor(np.eye(2)), Tensor(x)).data, x)

    def test_hand_sum(self):
        out = nx.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        assert out.data.tolist() == [[3.0], [7.0]]

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(nx.matmul(Tensor(a), Tensor(b)).data, triple_loop(a, b), atol=1e-12, rtol=0)

    def test_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_rules(self):
        rng = np.random.default_rng(1)
        a, b = leaf(rng.normal(size=(3, 4)), "a"), leaf(rng.normal(size=(4, 2)), "b")
        g = rng.normal(size=(3, 2))
        with Graph() as graph:
            loss = nx.sum_all(nx.mul(nx.matmul(a, b), g))
        grads = nx.backward(graph, loss)
        np.testing.assert_allclose(grads["a"], g @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(grads["b"], a.data.T @ g, atol=1e-12)


class TestLayerNorm:
    def test_constant_row_gives_beta(self):
        beta = np.array([0.5, -1.0, 2.0])
        out = nx.layer_norm(Tensor(np.full((2, 3), 7.0)), Tensor(np.ones(3)), Tensor(beta))
        np.testing.assert_array_equal(out.data, np.tile(beta, (2, 1)))

    def test_already_normalised(self):
        out = nx.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-10)

    def test_direct_formula(self):
        rng = np.random.default_rng(2)
        x, gamma, beta = rng.normal(size=8), rng.normal(size=8), rng.normal(size=8)
        mean = sum(x) / 8
        var = sum((v - mean) ** 2 for v in x) / 8
        expected = [(v - mean) / math.sqrt(var + 1e-5) * gm + bt for v, gm, bt in zip(x, gamma, beta)]
        out = nx.layer_norm(Tensor(x[None]), Tensor(gamma), Tensor(beta), eps=1e-5)
        np.testing.assert_allclose(out.data[0], expected, atol=1e-10)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            nx.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(4)))


class TestCrossEntropy:
    def test_uniform(self):
        loss = nx.softmax_cross_entropy(Tensor(np.zeros((3, 4))), [0, 1, 2])
        assert float(loss.data) == pytest.approx(math.log(4), abs=1e-12)

    def test_saturated(self):
        logits = np.zeros((1, 5))
        logits[0, 3] = 100.0
        assert float(nx.softmax_cross_entropy(Tensor(logits), [3]).data) == pytest.approx(0.0, abs=1e-12)

    def test_direct_formula(self):
        expected = -math.log(math.exp(3) / (math.exp(1) + math.exp(2) + math.exp(3)))
        loss = nx.softmax_cross_entropy(Tensor([[1.0, 2.0, 3.0]]), [2])
        assert float(loss.data) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.407606, abs=1e-6)

    def test_ignored_positions_contribute_nothing(self):
        logits = np.random.default_rng(3).normal(size=(4, 6))
        full = nx.softmax_cross_entropy(Tensor(logits[:2]), [1, 2])
        masked = nx.softmax_cross_entropy(Tensor(logits), [1, 2, -100, -100])
        assert float(full.data) == float(masked.data)

    def test_all_ignored(self):
        with pytest.raises(ValueError, match="empty loss"):
            nx.softmax_cross_entropy(Tensor(np.zeros((2, 3))), [0, 0], ignore_index=0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
    def test_non_negative_and_softmax_normalised(self, logits):
        assert float(nx.softmax_cross_entropy(Tensor(logits), [0, 1, 4]).data) >= 0.0
        p = nx.softmax(Tensor(logits)).data
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        x = leaf(np.random.default_rng(4).normal(size=(2, 3, 4)), "x")
        with Graph() as g:
            loss = nx.sum_all(x)
        assert np.array_equal(nx.backward(g, loss)["x"], np.ones((2, 3, 4)))

    def test_frozen_leaf_gets_no_gradient(self):
        w = leaf([[1.0, 2.0]], "w")
        x = Tensor([[3.0], [4.0]], name="x")
        with Graph() as g:
            loss = nx.sum_all(nx.matmul(w, x))
        grads = nx.backward(g, loss)
        assert set(grads) == {"w"}
        assert x.grad is None

    def test_non_scalar_root(self):
        x = leaf(np.ones(3), "x")
        with Graph() as g:
            y = nx.scale(x, 2.0)
        with pytest.raises(ValueError, match="scalar"):
            nx.backward(g, y)

    def test_nothing_recorded_outside_graph(self):
        x = leaf(np.ones((2, 2)), "x")
        y = nx.matmul(x, x)
        assert not y.requires_grad

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_non_finite_is_an_error(self):
        with pytest.raises(NonFiniteError):
            nx.mul(Tensor([1e308]), Tensor([1e308]))

    def test_sequence_nll_is_sum_of_token_losses(self):
        rng = np.random.default_rng(5)
        logits = rng.normal(size=(6, 7))
        targets = rng.integers(0, 7, size=6)
        total = sum(float(nx.softmax_cross_entropy(Tensor(logits[i:i + 1]), [targets[i]]).data) for i in range(6))
        mean = float(nx.softmax_cross_entropy(Tensor(logits), targets).data)
        assert mean * 6 == pytest.approx(total, abs=1e-12)


class TestGradCheck:
    def test_quadratic(self):
        p = leaf(np.random.default_rng(6).normal(size=5), "p")
        err = nx.grad_check(lambda: nx.scale(nx.sum_all(nx.mul(p, p)), 0.5), [p])
        assert err < 1e-9

    def test_chain(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(3, 8)))
        gamma, beta = leaf(rng.normal(size=8), "gamma"), leaf(rng.normal(size=8), "beta")
        w = leaf(rng.normal(size=(8, 5)), "w")
        targets = [0, 3, 4]

        def f():
            h = nx.layer_norm(x, gamma, beta)
            return nx.softmax_cross_entropy(nx.matmul(h, w), targets)

        assert nx.grad_check(f, [gamma, beta, w], eps=1e-5) < 1e-5

    def test_frozen_leaf_excluded(self):
        rng = np.random.default_rng(8)
        w = leaf(rng.normal(size=(2, 2)), "w")
        frozen = Tensor(rng.normal(size=(2, 2)), name="frozen")
        calls = []

        def f():
            calls.append(1)
            return nx.sum_all(nx.matmul(w, frozen))

        nx.grad_check(f, [w, frozen])
        # one analytic pass plus two probes per trainable coordinate only
        assert len(calls) == 1 + 2 * w.data.size

    def test_eps_range(self):
        with pytest.raises(ValueError):
            nx.grad_check(lambda: nx.sum_all(Tensor(1.0)), [], eps=0.1)

    def test_non_finite_probe(self):
        p = leaf([1.0], "p")

        def f():
            if p.data[0] != 1.0:
                return Tensor(np.inf)
            return nx.sum_all(p)

        with pytest.raises(NonFiniteError):
            nx.grad_check(f, [p])


def test_kernels_are_deterministic():
    rng = np.random.default_rng(9)
    x, w = rng.normal(size=(4, 6, 8)), rng.normal(size=(8, 8))
    runs = [nx.softmax(nx.linear(Tensor(x), Tensor(w))).data.tobytes() for _ in range(2)]
    assert runs[0] == runs[1]


def test_dropout_eval_is_identity_and_mask_is_seeded():
    x = Tensor(np.ones((4, 5)))
    assert nx.dropout(x, 0.5, None) is x
    a = nx.dropout(x, 0.5, np.random.default_rng(1)).data
    b = nx.dropout(x, 0.5, np.random.default_rng(1)).data
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
