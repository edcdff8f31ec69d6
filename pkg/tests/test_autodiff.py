import numpy as np
import pytest

from mtpp import autodiff as ad


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_grad(build, x_shape, seed=0, atol=1e-6):
    """build(tensor) -> scalar Tensor; compares grad against central FD."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=x_shape)
    t = ad.Tensor(x.copy(), requires_grad=True)
    out = build(t)
    out.backward()
    num = numeric_grad(lambda arr: float(build(ad.Tensor(arr)).data), x)
    np.testing.assert_allclose(t.grad, num, atol=atol, rtol=1e-4)


class TestElementwise:
    def test_add_mul_broadcast(self):
        rng = np.random.default_rng(1)
        other = rng.normal(size=(1, 4))
        check_grad(lambda t: ((t + other) * (t * 2.0 + 1.0)).sum(), (3, 4))

    def test_div(self):
        rng = np.random.default_rng(2)
        denom = 1.5 + rng.uniform(size=(3, 1))
        check_grad(lambda t: (t / denom).sum(), (3, 4))
        check_grad(lambda t: (2.0 / (t * t + 3.0)).sum(), (3, 4))

    def test_tanh_exp_log(self):
        check_grad(lambda t: t.tanh().sum(), (5,))
        check_grad(lambda t: t.exp().sum(), (5,))
        check_grad(lambda t: (t * t + 1.0).log().sum(), (5,))

    def test_clip_passes_inside_blocks_outside(self):
        x = np.array([-2.0, -0.5, 0.5, 2.0])
        t = ad.Tensor(x, requires_grad=True)
        t.clip(-1.0, 1.0).sum().backward()
        np.testing.assert_array_equal(t.grad, [0.0, 1.0, 1.0, 0.0])


class TestShapeOps:
    def test_sum_axis_keepdims(self):
        check_grad(lambda t: (t.sum(axis=1, keepdims=True) * 3.0).sum(), (2, 3, 4))
        check_grad(lambda t: t.sum(axis=0).tanh().sum(), (4, 3))

    def test_reshape(self):
        check_grad(lambda t: t.reshape(6, 2).tanh().sum(), (3, 4))

    def test_broadcast_to(self):
        check_grad(lambda t: ad.broadcast_to(t, (5, 3, 4)).tanh().sum(), (3, 4))

    def test_concat(self):
        rng = np.random.default_rng(3)
        const = rng.normal(size=(3, 2))
        check_grad(
            lambda t: ad.concat([ad.Tensor(const), t], axis=-1).tanh().sum(), (3, 4)
        )


class TestEinsumGather:
    @pytest.mark.parametrize(
        "sub,a_shape,b_shape",
        [
            ("nf,df->nd", (5, 3), (4, 3)),
            ("qkf,df->qkd", (5, 2, 3), (4, 3)),
            ("qkhd,nhd->qkhn", (4, 2, 2, 3), (6, 2, 3)),
            ("qkhn,nhv->qkhv", (4, 2, 2, 6), (6, 2, 3)),
            ("qkd,kd->qk", (4, 2, 3), (2, 3)),
        ],
    )
    def test_einsum_grads(self, sub, a_shape, b_shape):
        rng = np.random.default_rng(4)
        b = rng.normal(size=b_shape)
        check_grad(lambda t: ad.einsum(sub, t, ad.Tensor(b)).tanh().sum(), a_shape)
        a = rng.normal(size=a_shape)
        check_grad(lambda t: ad.einsum(sub, ad.Tensor(a), t).tanh().sum(), b_shape)

    def test_gather_rows(self):
        idx = np.array([2, 0, 2, 1])
        check_grad(lambda t: ad.gather_rows(t, idx).tanh().sum(), (3, 4))

    def test_index_select1(self):
        idx = np.array([1, 0, 2])
        check_grad(lambda t: ad.index_select1(t, idx).tanh().sum(), (3, 4, 2))
        check_grad(lambda t: ad.index_select1(t, idx).sum(), (3, 4))


class TestComposite:
    def test_log_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        t = ad.Tensor(rng.normal(size=(6, 4)) * 10)
        p = np.exp(ad.log_softmax(t, axis=1).data)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_log_softmax_grad(self):
        idx = np.array([0, 2, 1])
        check_grad(
            lambda t: ad.index_select1(ad.log_softmax(t, axis=1), idx).sum(),
            (3, 4),
        )

    def test_reused_node_accumulates(self):
        def build(t):
            y = t.tanh()
            return (y * y + y).sum()

        check_grad(build, (4, 3))

    def test_no_grad_builds_no_graph(self):
        t = ad.Tensor(np.ones((3, 3)))
        out = (t * 2.0).tanh().sum()
        assert out._parents == () and out._backward is None
