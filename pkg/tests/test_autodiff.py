import numpy as np
import pytest

from glyphtree import autodiff as ad
from glyphtree.autodiff import Tensor, backward, grad_check


@pytest.fixture(autouse=True)
def finite_checks():
    ad.CHECK_FINITE = True
    yield
    ad.CHECK_FINITE = False


def t(arr, grad=True, dtype=np.float64):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=grad)


def test_softmax_symmetry_and_mask():
    out = ad.softmax_lastdim(t([[0.0, 0.0]]))
    assert np.allclose(out.value, [[0.5, 0.5]])
    masked = ad.softmax_lastdim(t([[1.3, 0.0]]), additive=np.array([[0.0, ad.MASK_SENTINEL]]))
    assert masked.value[0, 0] == 1.0
    assert masked.value[0, 1] == 0.0


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    x = t(rng.standard_normal((6, 9)))
    out = ad.softmax_lastdim(x)
    assert np.allclose(out.value.sum(axis=-1), 1.0, atol=1e-6)


def test_matmul_identity():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((3, 3))
    out = ad.matmul(t(np.eye(3)), t(m))
    assert np.allclose(out.value, m)


def test_layernorm_moments():
    rng = np.random.default_rng(2)
    x = t(rng.standard_normal((5, 32)) * 3 + 1)
    gain = t(np.ones(32))
    bias = t(np.zeros(32))
    out = ad.layernorm(x, gain, bias).value
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-5


def test_backward_sum_and_square():
    x = t(np.arange(6, dtype=np.float64).reshape(2, 3))
    backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))

    x.zero_grad()
    backward(ad.sum_all(ad.mul(x, x)))
    assert np.allclose(x.grad, 2 * x.value)


def test_backward_accumulates_over_fanout():
    x = t([2.0])
    y = ad.add(x, x)
    backward(ad.sum_all(y))
    assert np.allclose(x.grad, [2.0])


def test_nonscalar_loss_rejected():
    with pytest.raises(ad.NonScalarLoss):
        backward(t([1.0, 2.0]))


def test_nonfinite_input_rejected():
    with pytest.raises(ad.NonFiniteInput):
        ad.add(t([np.inf]), t([1.0]))


def test_shape_mismatch():
    with pytest.raises(ad.ShapeMismatch):
        ad.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))
    with pytest.raises(ad.ShapeMismatch):
        ad.add(t(np.zeros((2, 3))), t(np.zeros((2, 4))))


def test_gradcheck_linear_map_exact():
    rng = np.random.default_rng(3)
    w = t(rng.standard_normal(7))
    x = rng.standard_normal(7)
    report = grad_check(lambda: ad.sum_all(ad.mul(w, Tensor(x))), {"w": w})
    assert report["pass"]
    assert report["params"]["w"]["rel_err"] < 1e-9


def test_gradcheck_two_layer_mlp():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((4, 6)))
    params = {
        "w1": t(rng.standard_normal((6, 8)) * 0.5),
        "b1": t(rng.standard_normal(8) * 0.1),
        "w2": t(rng.standard_normal((8, 3)) * 0.5),
        "b2": t(rng.standard_normal(3) * 0.1),
    }

    def f():
        h = ad.gelu(ad.add(ad.matmul(x, params["w1"]), params["b1"]))
        out = ad.add(ad.matmul(h, params["w2"]), params["b2"])
        return ad.sum_all(ad.mul(out, out))

    report = grad_check(f, params, h=1e-4, tol=1e-6)
    assert report["pass"], report


@pytest.mark.parametrize(
    "op",
    [
        lambda x: ad.gelu(x),
        lambda x: ad.softmax_lastdim(x),
        lambda x: ad.l2_normalize(x),
        lambda x: ad.exp(ad.scale(x, 0.2)),
        lambda x: ad.layernorm(
            x, Tensor(np.full(5, 1.3)), Tensor(np.full(5, -0.2))
        ),
        lambda x: ad.transpose_last2(x),
        lambda x: ad.slice_lastdim(x, 1, 4),
        lambda x: ad.reshape(x, (5, 4)),
        lambda x: ad.mean_rows(x),
    ],
)
def test_op_vjp_matches_finite_differences(op):
    rng = np.random.default_rng(8)
    x = t(rng.standard_normal((4, 5)))
    # probe with a fixed random linear functional plus a quadratic term
    w = Tensor(rng.standard_normal(op(x).value.shape))

    def f():
        out = op(x)
        return ad.add(
            ad.sum_all(ad.mul(out, w)), ad.scale(ad.sum_all(ad.mul(out, out)), 0.1)
        )

    report = grad_check(f, {"x": x}, h=1e-4, tol=1e-6)
    assert report["pass"], report


def test_embedding_and_gather_vjp():
    rng = np.random.default_rng(9)
    table = t(rng.standard_normal((6, 3)))
    idx = np.array([[0, 2, 2], [5, 1, 0]])

    def f():
        out = ad.embedding_lookup(table, idx)
        return ad.sum_all(ad.mul(out, out))

    assert grad_check(f, {"table": table}, tol=1e-6)["pass"]

    vec = t(rng.standard_normal(7))
    gidx = np.array([[1, 1], [3, 6]])

    def g():
        out = ad.gather(vec, gidx)
        return ad.sum_all(ad.mul(out, out))

    assert grad_check(g, {"vec": vec}, tol=1e-6)["pass"]


def test_concat_and_token_ops_vjp():
    rng = np.random.default_rng(10)
    a = t(rng.standard_normal((2, 3, 4)))
    b = t(rng.standard_normal((2, 3, 2)))
    tok = t(rng.standard_normal(4))

    def f():
        x = ad.concat_lastdim([a, ad.slice_lastdim(b, 0, 2), b])
        y = ad.prepend_token(ad.slice_lastdim(x, 0, 4), tok)
        z = ad.select_token(y, 1)
        return ad.sum_all(ad.mul(z, z))

    assert grad_check(f, {"a": a, "b": b, "tok": tok}, tol=1e-6)["pass"]

    r1 = t(rng.standard_normal((2, 3)))
    r2 = t(rng.standard_normal((4, 3)))

    def g():
        x = ad.concat_rows([r1, r2])
        return ad.sum_all(ad.mul(x, x))

    assert grad_check(g, {"r1": r1, "r2": r2}, tol=1e-6)["pass"]


def test_cross_entropy_rows():
    logits = t(np.log(np.array([[0.25, 0.25, 0.25, 0.25]])))
    loss = ad.cross_entropy_rows(logits, np.array([2]))
    assert np.isclose(float(loss.value), np.log(4))

    rng = np.random.default_rng(12)
    x = t(rng.standard_normal((5, 7)))
    targets = rng.integers(0, 7, size=5)
    report = grad_check(
        lambda: ad.cross_entropy_rows(x, targets), {"x": x}, tol=1e-6
    )
    assert report["pass"], report


def test_masked_softmax_zero_probability_and_gradient():
    x = t(np.array([[1.0, 2.0, 3.0]]))
    additive = np.array([[0.0, ad.MASK_SENTINEL, 0.0]])
    out = ad.softmax_lastdim(x, additive=additive)
    assert out.value[0, 1] == 0.0
    backward(ad.sum_all(ad.mul(out, out)))
    assert x.grad[0, 1] == 0.0


def test_determinism_same_graph_same_output():
    rng = np.random.default_rng(13)
    vals = rng.standard_normal((8, 8))

    def run():
        x = t(vals.copy())
        out = ad.softmax_lastdim(ad.matmul(x, ad.transpose_last2(x)))
        loss = ad.sum_all(ad.mul(out, out))
        backward(loss)
        return float(loss.value), x.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)
