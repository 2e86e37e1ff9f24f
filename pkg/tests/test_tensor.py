import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from eie import eiet
from eie import tensor as T
from eie.gradcheck import check_gradient, finite_diff_check
from eie.optim import AdamState, adam_step
from eie.tensor import DimensionError, NumericError, Tape, Tensor

finite = st.floats(-1, 1, allow_nan=False, width=32)


def test_matmul_identity_and_dot():
    b = Tensor([[3, 4], [5, 6]])
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), b).data, b.data)
    assert T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_matmul_gradient_random(np_rng):
    b = Tensor(np_rng.uniform(-1, 1, (5, 3)))
    w = np_rng.uniform(-1, 1, (4, 3))
    f = lambda a: T.sum_(T.mul(T.matmul(a, b), Tensor(w)))
    assert finite_diff_check(f, np_rng.uniform(-1, 1, (4, 5))) < 1e-3
    a = Tensor(np_rng.uniform(-1, 1, (4, 5)))
    g = lambda bb: T.sum_(T.mul(T.matmul(a, bb), Tensor(w)))
    assert finite_diff_check(g, b.data) < 1e-3


def test_softmax_examples():
    assert np.allclose(T.softmax_lastdim(Tensor(np.zeros(4))).data, 0.25)
    out = T.softmax_lastdim(Tensor([1000.0, 1000.0])).data
    assert np.all(np.isfinite(out)) and np.allclose(out, 0.5)


def test_softmax_random_rows_and_gradient(np_rng):
    x = np_rng.uniform(-1, 1, (3, 7))
    y = T.softmax_lastdim(Tensor(x)).data
    assert np.allclose(y.sum(-1), 1.0, atol=1e-5)
    w = Tensor(np_rng.uniform(-1, 1, (3, 7)))
    assert finite_diff_check(lambda t: T.sum_(T.mul(T.softmax_lastdim(t), w)), x) < 1e-3


@given(hnp.arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 9)), elements=st.floats(-50, 50, width=32)))
def test_softmax_property(x):
    y = T.softmax_lastdim(Tensor(x)).data
    assert np.allclose(y.sum(-1), 1.0, atol=1e-5)
    assert np.all((y >= 0) & (y <= 1))


def test_layer_norm_examples(np_rng):
    out = T.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    assert np.allclose(out, 0.0)
    beta = Tensor([1.0, 2.0, 3.0])
    out = T.layer_norm(Tensor(np_rng.normal(size=(4, 3))), Tensor(np.zeros(3)), beta).data
    assert np.allclose(out, beta.data)


def test_layer_norm_gradient(np_rng):
    g, b = Tensor(np_rng.uniform(-1, 1, 8)), Tensor(np_rng.uniform(-1, 1, 8))
    w = Tensor(np_rng.uniform(-1, 1, (2, 8)))
    assert finite_diff_check(lambda t: T.sum_(T.mul(T.layer_norm(t, g, b), w)), np_rng.uniform(-1, 1, (2, 8))) < 1e-3


def test_cross_entropy_examples(np_rng):
    loss = T.cross_entropy_from_logits(Tensor(np.zeros((1, 4))), [2], [True])
    assert loss.item() == pytest.approx(np.log(4), abs=1e-6)
    logits = np.zeros((1, 4))
    logits[0, 1] = 50.0
    assert T.cross_entropy_from_logits(Tensor(logits), [1], [True]).item() < 1e-12
    x = np_rng.normal(size=(5, 11))
    tgt = np_rng.integers(0, 11, 5)
    mask = np.array([0, 1, 0, 1, 0], dtype=bool)
    z = x - x.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    oracle = -np.mean(logp[np.arange(5), tgt][mask])
    assert T.cross_entropy_from_logits(Tensor(x), tgt, mask).item() == pytest.approx(oracle, abs=1e-6)


def test_cross_entropy_empty_mask():
    with pytest.raises(ValueError, match="no positions"):
        T.cross_entropy_from_logits(Tensor(np.zeros((3, 4))), [0, 0, 0], [False] * 3)


def test_adam_zero_gradient():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    st_ = AdamState()
    adam_step(p, {"w": np.zeros(2)}, st_, lr=0.1)
    assert p["w"].data.tolist() == [1.0, -2.0] and st_.step == 1


def test_adam_first_step():
    p = {"w": Tensor(np.array([1.0]))}
    adam_step(p, {"w": np.array([1.0])}, AdamState(), lr=0.1, beta1=0.9, beta2=0.999)
    assert p["w"].data[0] == pytest.approx(0.9, abs=1e-6)


def test_adam_converges_on_quadratic():
    p = {"w": Tensor(np.array([3.0]))}
    st_ = AdamState()
    for _ in range(1000):
        adam_step(p, {"w": 2 * p["w"].data}, st_, lr=0.05)
    assert abs(p["w"].data[0]) < 0.05


def test_adam_errors():
    p = {"w": Tensor(np.zeros(2))}
    with pytest.raises(DimensionError):
        adam_step(p, {"w": np.zeros(3)}, AdamState())
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.zeros(2)}, AdamState(), lr=0.0)


def test_finite_diff_examples(np_rng):
    assert finite_diff_check(lambda t: T.sum_(t), np_rng.uniform(-1, 1, (3, 4))) < 1e-6
    onehot = Tensor(np.eye(5)[[1, 3]])
    f = lambda t: T.neg(T.mean(T.sum_(T.mul(T.softmax_lastdim(t), onehot), axis=-1)))
    assert finite_diff_check(f, np_rng.uniform(-1, 1, (2, 5))) < 1e-3


def test_finite_diff_errors():
    with pytest.raises(ValueError, match="scalar"):
        finite_diff_check(lambda t: T.scale(t, 2.0), np.ones(3))
    with pytest.raises(ValueError, match="eps"):
        finite_diff_check(lambda t: T.sum_(t), np.ones(3), eps=1e-6)


def test_fan_out_accumulates_exactly(np_rng):
    x = Tensor(np_rng.uniform(-1, 1, 5), requires_grad=True)
    with Tape() as tape:
        f = T.sum_(T.mul(x, x))
        g = T.sum_(T.sigmoid(x))
        out = T.add(f, g)
    tape.backward(out)
    both = x.grad.copy()

    def grad_of(fn):
        y = Tensor(x.data, requires_grad=True)
        with Tape() as tp:
            o = fn(y)
        tp.backward(o)
        return y.grad

    gf = grad_of(lambda y: T.sum_(T.mul(y, y)))
    gg = grad_of(lambda y: T.sum_(T.sigmoid(y)))
    assert np.array_equal(both, gf + gg)


def test_backward_is_deterministic(np_rng):
    w = np_rng.uniform(-1, 1, (6, 4))
    x0 = np_rng.uniform(-1, 1, (3, 6))

    def run():
        x = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            out = T.sum_(T.gelu(T.matmul(x, Tensor(w))))
        tape.backward(out)
        return out.data.copy(), x.grad.copy()

    a, b = run(), run()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_tape_records_in_execution_order():
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        a = T.scale(x, 2.0)
        b = T.gelu(a)
        T.sum_(b)
    ops = [n.op for n in tape.nodes]
    assert ops == ["scale", "gelu", "sum"]


def test_nothing_recorded_without_tape():
    x = Tensor(np.ones(2), requires_grad=True)
    T.sum_(x)
    assert x.grad is None


def test_numeric_error_on_non_finite():
    with pytest.raises(NumericError):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_tensor_is_float32_by_default():
    assert Tensor([1, 2]).data.dtype == np.float32


def test_float32_gradient_check_of_an_op(np_rng):
    # production precision is also within tolerance for a well-conditioned op
    x = np_rng.uniform(-1, 1, (3, 4))
    r = check_gradient(lambda t: T.sum_(T.mul(t, t)), x, eps=1e-2, dtype=np.float32)
    assert r.max_rel_error < 1e-3


@given(hnp.arrays(np.float32, hnp.array_shapes(max_dims=4, max_side=5), elements=finite))
def test_eiet_round_trip(arr):
    back = eiet.decode(eiet.encode(arr))
    assert back.shape == arr.shape and back.dtype == np.float32
    assert back.tobytes() == arr.tobytes()


def test_eiet_layout():
    raw = eiet.encode(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert raw[:4] == b"EIET" and raw[4] == 1 and raw[5] == 2
    assert np.frombuffer(raw[6:14], "<u4").tolist() == [1, 3]
    assert np.frombuffer(raw[14:], "<f4").tolist() == [1.0, 2.0, 3.0]
    assert len(raw) == 14 + 12


def test_eiet_rejects_garbage():
    with pytest.raises(eiet.EietFormatError):
        eiet.decode(b"NOPE\x01\x00")
    good = eiet.encode(np.ones(4, dtype=np.float32))
    with pytest.raises(eiet.EietFormatError):
        eiet.decode(good[:-2])
