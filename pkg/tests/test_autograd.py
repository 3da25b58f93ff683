import numpy as np
import pytest

from hetgraph.nn import autograd as ag
from hetgraph.nn.autograd import Tensor
from hetgraph.nn.params import ModelParameters, read_checkpoint, save_checkpoint, sgd_step

from oracles import finite_difference, relative_error


def param(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), requires_grad=True)


def check(build, *leaves, tol=1e-6):
    """Compare backward() against central differences for every leaf."""
    for t in leaves:
        t.grad = None
    ag.backward(build())
    for t in leaves:
        num = finite_difference(lambda: build().data.item(), t.data)
        assert relative_error(t.grad, num).max() < tol


class TestOps:
    def test_values(self):
        assert ag.sigmoid(Tensor([[0.0]])).data.item() == 0.5
        assert ag.softmax(Tensor([[0.0, 0.0]])).data.tolist() == [[0.5, 0.5]]
        v = np.array([[1.0], [2.0], [3.0]])
        assert np.array_equal(ag.matmul(Tensor(np.eye(3)), Tensor(v)).data, v)

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(0).standard_normal((4, 5)) * 30)
        assert np.allclose(ag.softmax(x).data.sum(axis=1), 1.0)

    def test_log_softmax_stable(self):
        y = ag.log_softmax(Tensor([[1000.0, 0.0]])).data
        assert np.all(np.isfinite(y)) and y[0, 0] == 0.0

    def test_sigmoid_extremes(self):
        y = ag.sigmoid(Tensor([[-800.0, 800.0]])).data
        assert y.tolist() == [[0.0, 1.0]]

    def test_gather_negative_reads_zero(self):
        a = Tensor([[1.0, 2.0]])
        assert ag.gather_flat(a, [[1], [-1]]).data.tolist() == [[2.0], [0.0]]


class TestBackward:
    def test_linear_case(self):
        W = param((3, 2))
        x = np.array([[1.0, -2.0, 0.5]])
        ag.backward(ag.sum_all(ag.matmul(Tensor(x), W)))
        assert np.array_equal(W.grad, np.repeat(x.T, 2, axis=1))

    def test_off_path_parameter_untouched(self):
        a, b = param((1, 2)), param((1, 2), 1)
        ag.backward(ag.sum_all(ag.tanh(a)))
        assert b.grad is None

    def test_needs_scalar(self):
        with pytest.raises(ValueError):
            ag.backward(param((2, 2)))

    def test_needs_graph(self):
        with pytest.raises(RuntimeError):
            ag.backward(Tensor([[1.0]]))

    def test_not_a_tensor(self):
        with pytest.raises(TypeError):
            ag.backward(1.0)

    def test_no_grad_records_nothing(self):
        a = param((1, 1))
        with ag.no_grad():
            y = ag.mul(a, a)
        assert not y.requires_grad

    def test_shared_subexpression(self):
        a = param((2, 2))
        check(lambda: ag.sum_all(ag.mul(ag.tanh(a), ag.tanh(a))), a)

    @pytest.mark.parametrize("op", ["sigmoid", "tanh", "relu", "softmax", "log_softmax"])
    def test_unary(self, op):
        a = param((3, 4), 2)
        w = np.random.default_rng(9).standard_normal((3, 4))
        check(lambda: ag.weighted_sum(getattr(ag, op)(a), w), a)

    def test_log(self):
        a = Tensor(np.random.default_rng(3).uniform(0.5, 2.0, (2, 3)), requires_grad=True)
        check(lambda: ag.sum_all(ag.log(a)), a)

    def test_matmul_add_broadcast(self):
        x, W, b = param((4, 3)), param((3, 2), 1), param((1, 2), 2)
        check(lambda: ag.sum_all(ag.tanh(ag.add(ag.matmul(x, W), b))), x, W, b)

    def test_structural_ops(self):
        a, b = param((3, 2)), param((3, 3), 1)
        w = np.random.default_rng(5).standard_normal((4, 5))

        def build():
            c = ag.concat([a, b], axis=1)
            rows = ag.take_rows(c, [2, 0, 2, 1])
            return ag.weighted_sum(rows, w)
        check(build, a, b)

    def test_slice_gather_scale(self):
        a = param((2, 5))

        def build():
            s = ag.slice_cols(a, 1, 4)
            g = ag.gather_flat(s, [[0], [5], [-1], [5]])
            return ag.sum_all(ag.scale(ag.mul(g, g), 0.5))
        check(build, a)

    def test_concat_rows_and_sub(self):
        a, b = param((1, 3)), param((2, 3), 1)
        check(lambda: ag.sum_all(ag.relu(ag.sub(ag.concat([a, b], axis=0), Tensor(np.full((3, 3), 0.1))))),
              a, b)


class TestParams:
    def test_seeded_init(self):
        p1, p2 = ModelParameters(3), ModelParameters(3)
        w1, w2 = p1.weight("a", 4, 5), p2.weight("a", 4, 5)
        assert np.array_equal(w1.data, w2.data)
        assert np.abs(w1.data).max() <= 0.5
        assert not ModelParameters(4).weight("a", 4, 5).data.tolist() == w1.data.tolist()

    def test_init_independent_of_creation_order(self):
        p1, p2 = ModelParameters(0), ModelParameters(0)
        p1.weight("x", 2, 2)
        a = p1.weight("y", 2, 2).data
        b = p2.weight("y", 2, 2).data
        assert np.array_equal(a, b)

    def test_duplicate_name(self):
        p = ModelParameters(0)
        p.weight("x", 2, 2)
        with pytest.raises(KeyError):
            p.weight("x", 2, 2)

    def test_sgd(self):
        p = ModelParameters(0)
        w = p.bias("w", 1)
        w.data[...] = 1.0
        sgd_step(p, {"w": np.array([[2.0]])}, 0.1)
        assert w.data.item() == pytest.approx(0.8)
        sgd_step(p, {"w": np.array([[5.0]])}, 0.0)
        assert w.data.item() == pytest.approx(0.8)

    def test_sgd_missing_gradient(self):
        p = ModelParameters(0)
        p.bias("w", 1)
        with pytest.raises(KeyError):
            sgd_step(p, {}, 0.1)

    def test_sgd_decreases_quadratic(self):
        p = ModelParameters(0)
        w = p.weight("w", 3, 1)
        target = np.array([[1.0], [-2.0], [0.5]])

        def loss():
            d = ag.sub(w, Tensor(target))
            return ag.sum_all(ag.mul(d, d))
        values = []
        for _ in range(3):
            p.zero_grad()
            L = loss()
            values.append(L.data.item())
            ag.backward(L)
            sgd_step(p, p.grads(), 0.1)
        assert values[0] > values[1] > values[2]

    def test_checkpoint_roundtrip(self, tmp_path):
        p = ModelParameters(1)
        p.weight("a.W", 3, 4)
        p.bias("a.b", 4)
        base = save_checkpoint(p, tmp_path / "ck", {"note": 1})
        state, manifest = read_checkpoint(base)
        assert manifest["format"] == "float32-le"
        assert [t["offset"] for t in manifest["tensors"]] == [0, 48]
        assert (tmp_path / "ck.bin").stat().st_size == 64
        for name, t in p.items():
            assert np.array_equal(state[name], t.data.astype(np.float32).astype(np.float64))
        assert manifest["extra"] == {"note": 1}
