import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvreenact import autodiff as ad
from mvreenact.autodiff import Tensor, backward
from mvreenact.optim import Adam, adam_step

from fd_oracle import finite_diff_grad, rel_err


def test_square_sum_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    loss = ad.sum_(x * x)
    backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_constant_loss_gives_zero_grads():
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ad.sum_(Tensor([5.0]))
    grads = backward(loss, {"x": x})
    np.testing.assert_array_equal(grads["x"], np.zeros(2))


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * x)


def test_reused_tensor_accumulates():
    x = Tensor([2.0], requires_grad=True)
    loss = ad.sum_(x * x + x)
    backward(loss)
    np.testing.assert_allclose(x.grad, [5.0])


# ---------------------------------------------------------------------------
# finite-difference checks, one per registered op

def _check(f_t, f_np, arrays, seeds_done, tol=1e-4):
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = f_t(*tensors)
    backward(loss)
    for i, t in enumerate(tensors):
        fd = finite_diff_grad(lambda *raw: float(f_np(*raw)), list(arrays), i)
        assert rel_err(t.grad, fd) < tol, f"op grad mismatch on input {i}"


OPS = {
    "add": (lambda a, b: ad.sum_((a + b) * (a + b)),
            lambda a, b: ((a + b) ** 2).sum(), 2),
    "sub": (lambda a, b: ad.sum_((a - b) * (a - b)),
            lambda a, b: ((a - b) ** 2).sum(), 2),
    "mul": (lambda a, b: ad.sum_(a * b),
            lambda a, b: (a * b).sum(), 2),
    "div": (lambda a, b: ad.sum_(ad.div(a, b) * ad.div(a, b)),
            lambda a, b: ((a / b) ** 2).sum(), 2),
    "matmul": (lambda a, b: ad.sum_((a @ b) * (a @ b)),
               lambda a, b: ((a @ b) ** 2).sum(), 2),
    "gelu": (lambda a: ad.sum_(ad.gelu(a) * ad.gelu(a)),
             lambda a: (_gelu_np(a) ** 2).sum(), 1),
    "sigmoid": (lambda a: ad.sum_(ad.sigmoid(a) * ad.sigmoid(a)),
                lambda a: ((1 / (1 + np.exp(-a))) ** 2).sum(), 1),
    "mean": (lambda a: ad.sum_(ad.mean(a, axes=0) * ad.mean(a, axes=0)),
             lambda a: (a.mean(axis=0) ** 2).sum(), 1),
    "sum_axes": (lambda a: ad.sum_(ad.sum_(a, axes=1, keepdims=True) * a),
                 lambda a: (a.sum(axis=1, keepdims=True) * a).sum(), 1),
    "transpose": (lambda a: ad.sum_(ad.transpose(a, (1, 0)) @ a),
                  lambda a: (a.T @ a).sum(), 1),
    "reshape": (lambda a: ad.sum_(ad.reshape(a, (6,)) * ad.reshape(a, (6,))),
                lambda a: (a.reshape(6) ** 2).sum(), 1),
}


def _gelu_np(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))


@pytest.mark.parametrize("name", sorted(OPS))
@pytest.mark.parametrize("seed", range(10))
def test_op_matches_finite_differences(name, seed):
    f_t, f_np, nargs = OPS[name]
    rng = np.random.default_rng([seed, hash(name) % 2 ** 31])
    arrays = [rng.normal(0.0, 1.0, size=(2, 3)) for _ in range(nargs)]
    if name == "div":
        arrays[1] = np.sign(arrays[1]) * (np.abs(arrays[1]) + 0.5)
    if name == "matmul":
        arrays[1] = rng.normal(0.0, 1.0, size=(3, 2))
    _check(f_t, f_np, arrays, seed)


@pytest.mark.parametrize("seed", range(10))
def test_concat_split_gather_finite_differences(seed):
    rng = np.random.default_rng([seed, 77])
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 2))
    idx = np.array([0, 2, 2, 1])

    def f_t(a, b):
        cat = ad.concat([a, b], axis=1)
        lo, hi = ad.split(cat, [2, 3], axis=1)
        g = ad.gather(cat, idx, axis=1)
        return ad.sum_(lo * lo) + ad.sum_(hi) + ad.sum_(g * g)

    def f_np(a, b):
        cat = np.concatenate([a, b], axis=1)
        lo, hi = cat[:, :2], cat[:, 2:]
        g = np.take(cat, idx, axis=1)
        return (lo ** 2).sum() + hi.sum() + (g ** 2).sum()

    _check(f_t, f_np, [a, b], seed)


@pytest.mark.parametrize("seed", range(10))
def test_layer_norm_finite_differences(seed):
    rng = np.random.default_rng([seed, 13])
    x = rng.normal(size=(3, 5))
    g = rng.normal(1.0, 0.1, size=5)
    b = rng.normal(0.0, 0.1, size=5)

    def f_t(x, g, b):
        return ad.sum_(ad.layer_norm(x, g, b) * ad.layer_norm(x, g, b))

    def f_np(x, g, b):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        y = (x - mu) / np.sqrt(var + 1e-6) * g + b
        return (y ** 2).sum()

    _check(f_t, f_np, [x, g, b], seed)


@pytest.mark.parametrize("seed", range(10))
def test_softmax_with_bias_finite_differences(seed):
    rng = np.random.default_rng([seed, 29])
    logits = rng.normal(size=(3, 4))
    bias = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))  # fixed mixing weights probe the full Jacobian

    def f_t(l, b):
        return ad.sum_(ad.softmax_with_bias(l, b) * Tensor(w))

    def f_np(l, b):
        z = l + b
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return (e / e.sum(axis=-1, keepdims=True) * w).sum()

    _check(f_t, f_np, [logits, bias], seed)


@pytest.mark.parametrize("seed", range(10))
def test_random_composite_graph_finite_differences(seed):
    # matmul -> layernorm -> softmax -> mean chain on random shapes
    rng = np.random.default_rng([seed, 101])
    x = rng.normal(size=(4, 5))
    w1 = rng.normal(size=(5, 6)) * 0.5
    g = np.ones(6)
    b = np.zeros(6)
    w2 = rng.normal(size=(6, 3)) * 0.5

    def f_t(x, w1, g, b, w2):
        h = ad.layer_norm(x @ w1, g, b)
        p = ad.softmax_with_bias(h @ w2, None)
        return ad.mean(p * p)

    def f_np(x, w1, g, b, w2):
        h = x @ w1
        mu = h.mean(axis=-1, keepdims=True)
        var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
        h = (h - mu) / np.sqrt(var + 1e-6) * g + b
        z = h @ w2
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        return (p ** 2).mean()

    _check(f_t, f_np, [x, w1, g, b, w2], seed)


# ---------------------------------------------------------------------------
# softmax_with_bias contracts

def test_softmax_zero_bias_bitwise_identical():
    rng = np.random.default_rng(3)
    logits = Tensor(rng.normal(size=(5, 7)))
    plain = ad.softmax_with_bias(logits, None)
    biased = ad.softmax_with_bias(logits, Tensor(np.zeros((5, 7))))
    assert (plain.data == biased.data).all()


def test_softmax_known_value():
    out = ad.softmax_with_bias(Tensor([[0.0, 0.0]]), Tensor([[math.log(3.0), 0.0]]))
    np.testing.assert_allclose(out.data, [[0.75, 0.25]], rtol=1e-12)


def test_softmax_row_constant_bias_invariance():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(4, 6))
    const = rng.normal(size=(4, 1)) * np.ones((1, 6))
    a = ad.softmax_with_bias(Tensor(logits), None).data
    b = ad.softmax_with_bias(Tensor(logits), Tensor(const)).data
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert (a.argmax(axis=1) == b.argmax(axis=1)).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-30, 30), st.floats(-30, 30))
def test_softmax_rows_sum_to_one_under_arbitrary_bias(seed, lo, hi):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0, 5, size=(3, 8))
    bias = rng.uniform(min(lo, hi), max(lo, hi) + 1e-9, size=(3, 8))
    out = ad.softmax_with_bias(Tensor(logits), Tensor(bias)).data
    assert (out >= 0).all()
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


def test_softmax_rejects_nan():
    bad = np.array([[0.0, np.nan]])
    with pytest.raises(FloatingPointError):
        ad.softmax_with_bias(Tensor(bad), None)


def test_div_rejects_zero_denominator():
    with pytest.raises(FloatingPointError):
        ad.div(Tensor([1.0]), Tensor([0.0]))


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_grad_leaves_params_unchanged():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.zeros(2)}
    new, state = adam_step(p, g, {}, lr=0.1)
    np.testing.assert_array_equal(new["w"], p["w"])


def test_adam_first_step_matches_hand_computation():
    # m=0.1, v=0.001; bias-corrected ratio = 1 -> update ~ -lr
    p = {"w": np.array([0.0])}
    g = {"w": np.array([1.0])}
    new, state = adam_step(p, g, {}, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    expected = -0.1 * 1.0 / (1.0 + 1e-8)
    np.testing.assert_allclose(new["w"], [expected], rtol=1e-12)
    assert state["t"] == 1


def test_adam_shape_mismatch_raises():
    with pytest.raises(ValueError):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, {}, lr=0.1)


def _toy_training_losses(seed, steps=100):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    params = {"w": w, "b": b}
    opt = Adam(params, lr=1e-2)
    x = rng.normal(size=(8, 4))
    y = rng.normal(size=(8, 4))
    losses = []
    for _ in range(steps):
        pred = Tensor(x) @ w + b
        loss = ad.mean((pred - Tensor(y)) * (pred - Tensor(y)))
        ad.zero_grads(params)
        grads = backward(loss, params)
        opt.step(grads)
        losses.append(loss.item())
    return losses


def test_tape_replay_determinism_over_100_steps():
    a = _toy_training_losses(1234)
    b = _toy_training_losses(1234)
    assert a == b  # bitwise identical trajectories
    assert a[-1] < a[0]
