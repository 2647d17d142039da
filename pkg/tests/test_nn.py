import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajemp.nn import (F, Adam, Affine, CheckpointError, Conv2D, LSTMCell, Module, NonFiniteGradient,
                        Parameter, ReLU, Sequential, Sigmoid, Softmax, Tensor, grad_check, no_grad)
from trajemp.nn import checkpoint as ckpt
from trajemp.nn.tensor import topological_order

TOL = 1e-4


class TestForward:
    def test_identity_affine(self):
        a = Affine(4, 4)
        a.weight.data[:] = np.eye(4)
        x = np.arange(8.0).reshape(2, 4)
        assert np.array_equal(a(Tensor(x)).data, x)

    def test_relu_negative(self):
        assert np.all(ReLU()(Tensor(-np.ones((3, 3)) * 2)).data == 0)

    def test_all_ones_conv(self):
        conv = Conv2D(1, 1, 3, padding=0)
        conv.weight.data[:] = 1.0
        out = conv(Tensor(np.ones((1, 1, 5, 5))))
        assert out.shape == (1, 1, 3, 3) and np.all(out.data == 9.0)

    def test_conv_matches_direct_loops(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 6, 5))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(out)
        for n in range(2):
            for o in range(4):
                for i in range(out.shape[2]):
                    for j in range(out.shape[3]):
                        ref[n, o, i, j] = np.sum(xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * w[o]) + b[o]
        assert np.allclose(out, ref, atol=1e-12)

    def test_softmax_and_sigmoid_ranges(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((20, 7)) * 30)
        assert np.allclose(Softmax()(x).data.sum(axis=-1), 1.0, atol=1e-12)
        s = Sigmoid()(Tensor(rng.standard_normal((50,)) * 5)).data
        assert np.all((s > 0) & (s < 1))

    def test_log_softmax_stable(self):
        out = F.log_softmax(Tensor(np.array([[1000.0, 0.0, -1000.0]]))).data
        assert np.isfinite(out[0, :2]).all() and out[0, 0] == 0.0

    def test_layer_shape_errors(self):
        with pytest.raises(ValueError):
            Affine(3, 2)(Tensor(np.zeros((1, 4))))
        with pytest.raises(ValueError):
            Conv2D(2, 2)(Tensor(np.zeros((1, 3, 5, 5))))
        with pytest.raises(ValueError):
            LSTMCell(3, 2)(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))))


class TestBackward:
    def test_affine_weight_gradient(self):
        a = Affine(3, 2)
        a.weight.data[:] = np.eye(3)[:, :2]
        x = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        a(Tensor(x)).sum().backward()
        # d(sum xW)/dW[i, j] = sum over rows of x[:, i]
        assert np.array_equal(a.weight.grad, np.repeat(x.sum(0)[:, None], 2, axis=1))
        assert np.array_equal(a.bias.grad, [2.0, 2.0])

    def test_zero_output_gradient(self):
        rng = np.random.default_rng(0)
        net = Sequential(Affine(3, 4, rng), ReLU(), Affine(4, 2, rng))
        out = net(Tensor(rng.standard_normal((5, 3))))
        out.backward(np.zeros(out.shape))
        assert all(np.all(p.grad == 0) for p in net.parameters())

    def test_backward_without_graph(self):
        with pytest.raises(RuntimeError):
            Tensor(np.ones(3)).sum().backward()

    def test_no_grad_builds_no_graph(self):
        a = Affine(2, 2, np.random.default_rng(0))
        with no_grad():
            out = a(Tensor(np.ones((1, 2))))
        assert not out.requires_grad and not out._parents

    def test_shared_leaf_accumulates(self):
        x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
        (x * x + x).sum().backward()
        assert np.array_equal(x.grad, [5.0, 7.0])


def _affine_sigmoid_case(rng):
    layer = Affine(4, 3, rng)
    x = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    return (lambda: F.square(F.sigmoid(layer(x))).sum()), layer.parameters(), [x]


def _conv_case(rng):
    c1 = Conv2D(2, 3, 3, padding=1, rng=rng)
    c2 = Conv2D(3, 2, 3, stride=2, padding=0, rng=rng)
    x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
    return (lambda: F.tanh(c2(F.relu(c1(x)))).sum()), c1.parameters() + c2.parameters(), [x]


def _lstm_case(rng):
    cell = LSTMCell(3, 4, rng)
    xs = [Tensor(rng.standard_normal((2, 3))) for _ in range(8)]

    def loss():
        h = Tensor(np.zeros((2, 4)))
        c = Tensor(np.zeros((2, 4)))
        for x in xs:
            h, c = cell(x, h, c)
        return (h * Tensor(np.arange(8.0).reshape(2, 4))).sum()

    return loss, cell.parameters(), []


def _softmax_head_case(rng):
    a = Affine(3, 10, rng)
    x = Tensor(rng.standard_normal((4, 3)))
    idx = rng.integers(0, 5, size=(4, 2))

    def loss():
        logp = F.log_softmax(a(x).reshape(4, 2, 5))
        ent = -(F.exp(logp) * logp).sum()
        return F.take_last(logp, idx).sum() + 0.3 * ent

    return loss, a.parameters(), []


def _elementwise_case(rng):
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)
    y = Tensor(rng.standard_normal((1, 4)), requires_grad=True)

    def loss():
        z = F.log(x) * y + F.exp(y) * F.exp(-F.log(x)) - F.minimum(x, y * 2.0)
        z = F.concat([z, F.clip(x, 0.8, 1.5)], axis=0)
        return F.log_sigmoid(z[1:4]).mean() + F.square(F.softmax(z)).sum()

    return loss, [], [x, y]


CASES = {
    "affine_sigmoid": _affine_sigmoid_case,
    "conv_stack": _conv_case,
    "lstm_unroll8": _lstm_case,
    "softmax_head": _softmax_head_case,
    "elementwise": _elementwise_case,
}


def kink_safe_eps(loss_fn, eps=1e-5):
    """Finite-difference step that cannot carry any ReLU input across zero.

    Central differences are meaningless across a kink, and random instances
    occasionally put a pre-activation within 1e-5 of one.
    """
    margins = [np.abs(n._parents[0].data).min() for n in topological_order(loss_fn()) if n.op == "relu"]
    return min([eps] + [m / 4 for m in margins])


@pytest.mark.parametrize("kind", sorted(CASES))
@pytest.mark.parametrize("instance", range(20))
def test_gradients_match_finite_differences(kind, instance):
    rng = np.random.default_rng(1000 * instance + len(kind))
    loss, params, inputs = CASES[kind](rng)
    eps = kink_safe_eps(loss)
    assert grad_check(loss, params, eps=eps, inputs=inputs, max_coords=40, rng=rng) <= TOL


def test_kink_safe_step():
    x = Tensor(np.array([0.5, -2e-6, 3.0]), requires_grad=True)
    assert kink_safe_eps(lambda: F.relu(x).sum()) == pytest.approx(5e-7)
    assert kink_safe_eps(lambda: F.tanh(x).sum()) == 1e-5


def test_gradcheck_catches_a_wrong_gradient():
    x = Tensor(np.array([0.3, -0.7]), requires_grad=True)
    assert grad_check(lambda: F.tanh(x).sum(), [], inputs=[x]) <= TOL

    def loss():
        out = F.tanh(x)
        out._backward = lambda g: x._accumulate(2.0 * g)  # deliberately wrong
        return out.sum()

    assert grad_check(loss, [], inputs=[x]) > 0.1


def test_unroll_touches_exactly_t_cells():
    rng = np.random.default_rng(0)
    cell = LSTMCell(3, 5, rng)
    h = Tensor(rng.standard_normal((2, 5)))
    c = Tensor(rng.standard_normal((2, 5)))
    for _ in range(3):  # history before the truncation point
        h, c = cell(Tensor(rng.standard_normal((2, 3))), h, c)
    h, c = h.detach(), c.detach()
    for T in (1, 4, 7):
        hh, cc = h, c
        for _ in range(T):
            hh, cc = cell(Tensor(rng.standard_normal((2, 3))), hh, cc)
        nodes = topological_order(hh.sum())
        assert sum(n.op == "lstm_h" for n in nodes) == T


class TestAdam:
    def _param(self, value, grad):
        p = Parameter(np.array(value, dtype=np.float64))
        p.grad = np.array(grad, dtype=np.float64)
        return p

    def test_first_step_closed_form(self):
        p = self._param([2.0], [1.0])
        Adam([p], lr=1e-3, eps=1e-8, max_grad_norm=None).step()
        # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        assert p.data[0] == pytest.approx(2.0 - 1e-3 / (1.0 + 1e-8), abs=1e-15)

    def test_zero_gradient_keeps_parameters(self):
        p = self._param([1.0, -2.0], [0.0, 0.0])
        Adam([p]).step()
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_clipping_scales_gradient(self):
        # norm 5 clipped to 0.5: first moment must equal 0.1 * (1 - beta1) * g
        p = self._param([0.0, 0.0], [3.0, 4.0])
        norm = Adam([p], max_grad_norm=0.5).step()
        assert norm == pytest.approx(5.0)
        assert np.allclose(p.moment1, 0.1 * 0.1 * np.array([3.0, 4.0]))
        assert np.all(p.grad == 0)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(3)
            a = Affine(4, 3, rng)
            opt = Adam(a.parameters(), lr=1e-2)
            for _ in range(5):
                F.square(a(Tensor(rng.standard_normal((6, 4))))).sum().backward()
                opt.step()
            return [p.data.tobytes() for p in a.parameters()]

        assert run() == run()

    def test_non_finite_gradient(self):
        p = self._param([1.0], [np.nan])
        with pytest.raises(NonFiniteGradient):
            Adam([p]).step()
        assert p.data[0] == 1.0 and p.grad[0] == 0.0
        assert issubclass(NonFiniteGradient, FloatingPointError)

    def test_descends_a_quadratic(self):
        p = self._param([3.0, -4.0], [0.0, 0.0])
        opt = Adam([p], lr=0.1, max_grad_norm=None)
        for _ in range(500):
            F.square(p).sum().backward()
            opt.step()
        assert np.abs(p.data).max() < 1e-2


class Net(Module):
    def __init__(self, rng):
        self.layers = [Affine(3, 4, rng), Affine(4, 2, rng)]
        self.conv = Conv2D(1, 2, 3, rng=rng)
        self.cell = LSTMCell(2, 3, rng)


class TestCheckpoint:
    def test_names_are_stable(self):
        names = [n for n, _ in Net(np.random.default_rng(0)).named_parameters()]
        assert names[:2] == ["layers.0.weight", "layers.0.bias"]
        assert "cell.w_hidden" in names and "conv.weight" in names

    def test_round_trip(self, tmp_path):
        net = Net(np.random.default_rng(0))
        path = tmp_path / "net.empw"
        ckpt.save(path, ((n, p.data) for n, p in net.named_parameters()))
        other = Net(np.random.default_rng(1))
        ckpt.load_into(other, ckpt.load(path))
        for (n1, p1), (n2, p2) in zip(net.named_parameters(), other.named_parameters()):
            assert n1 == n2
            assert np.array_equal(p2.data, p1.data.astype(np.float32).astype(np.float64))

    def test_header(self, tmp_path):
        path = tmp_path / "x.empw"
        ckpt.save(path, [("a", np.ones((2, 3)))])
        raw = path.read_bytes()
        assert raw[:4] == b"EMPW" and struct.unpack_from("<II", raw, 4) == (1, 1)
        assert len(raw) == 12 + 4 + 1 + 4 + 8 + 24

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "x.empw"
        ckpt.save(path, [("a", np.ones(2))])
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            ckpt.load(path)

    def test_rejects_bad_magic_and_truncation(self, tmp_path):
        path = tmp_path / "x.empw"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(CheckpointError):
            ckpt.load(path)
        ckpt.save(path, [("a", np.ones(20))])
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointError):
            ckpt.load(path)

    def test_rejects_shape_or_name_mismatch(self):
        net = Net(np.random.default_rng(0))
        values = {n: p.data for n, p in net.named_parameters()}
        bad = dict(values)
        bad["conv.bias"] = np.zeros(5)
        with pytest.raises(CheckpointError):
            ckpt.load_into(net, bad)
        missing = dict(values)
        missing.pop("cell.bias")
        with pytest.raises(CheckpointError):
            ckpt.load_into(net, missing)


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(1, 4), cols=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_broadcast_add_gradient(rows, cols, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.standard_normal((rows, cols)), requires_grad=True)
    b = Tensor(rng.standard_normal((cols,)), requires_grad=True)
    w = rng.standard_normal((rows, cols))
    ((a + b) * Tensor(w)).sum().backward()
    assert np.allclose(a.grad, w) and np.allclose(b.grad, w.sum(0))
