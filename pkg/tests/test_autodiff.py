import math

import numpy as np
import pytest

from sanqa import autodiff as ad
from sanqa.autodiff import Tensor, backward, finite_diff_check, no_grad
from sanqa.errors import ContractError, DimensionError, NumericError, VocabError


def scalar_tanh(x):
    # brute-force tanh from exponentials, independent of numpy
    return (math.exp(x) - math.exp(-x)) / (math.exp(x) + math.exp(-x))


def check_grad(f, x, tol=1e-4, step=1e-5):
    err = finite_diff_check(f, x, step)
    assert err < tol, f"max relative gradient error {err}"


def test_softmax_uniform_over_equal_logits():
    p = ad.softmax(Tensor([0.0, 0.0, 0.0, 0.0]))
    assert np.allclose(p.values, [0.25, 0.25, 0.25, 0.25], atol=1e-15)


def test_oplus_adds_vector_to_each_column():
    out = ad.oplus(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([10.0, 20.0]))
    assert np.array_equal(out.values, [[11.0, 12.0], [23.0, 24.0]])


def test_tanh_matches_scalar_oracle():
    x = 0.7616
    out = ad.tanh(Tensor([x]))
    assert abs(out.values[0] - scalar_tanh(x)) < 1e-12
    assert abs(out.values[0] - 0.6420) < 1e-4


def test_sigmoid_matches_scalar_oracle():
    for x in (-30.0, -2.5, 0.0, 0.3, 30.0):
        out = ad.sigmoid(Tensor([x]))
        expect = 1.0 / (1.0 + math.exp(-x))
        assert abs(out.values[0] - expect) < 1e-12


def test_apply_primitive_dispatch():
    out = ad.apply_primitive("matmul", [Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])])
    assert out.values.shape == (1, 1) and out.values[0, 0] == 11.0
    cat = ad.apply_primitive("concat", [Tensor([1.0]), Tensor([2.0, 3.0])], axis=0)
    assert np.array_equal(cat.values, [1.0, 2.0, 3.0])
    with pytest.raises(ContractError):
        ad.apply_primitive("fused_frobnicate", [Tensor([1.0])])


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_of_sum_softmax_is_zero():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=7), requires_grad=True)
    backward(ad.softmax(x).sum())
    assert np.max(np.abs(x.grad)) < 1e-12


def test_gradient_accumulates_across_shared_use():
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    backward((x + x).sum())
    single = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    backward(single.sum())
    assert np.array_equal(x.grad, 2.0 * single.grad)


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = x + x
    with pytest.raises(ContractError):
        backward(y)


def test_tape_consumed_once():
    x = Tensor([1.0], requires_grad=True)
    y = x.sum()
    backward(y)
    with pytest.raises(ContractError):
        backward(y)


def test_finite_diff_sum_of_squares():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)

    def f(t):
        return (t * t).sum()

    err = finite_diff_check(f, x, 1e-5)
    assert err < 1e-8
    # closed-form gradient is 2x
    assert np.allclose(x.grad, [2.0, 4.0, 6.0], atol=1e-12)


def test_finite_diff_constant_function():
    x = Tensor([1.0, 2.0], requires_grad=True)
    err = finite_diff_check(lambda t: Tensor(5.0).sum(), x, 1e-5)
    assert err == 0.0


def test_shape_mismatch_names_primitive():
    with pytest.raises(DimensionError, match="matmul"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError, match="oplus"):
        ad.oplus(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    with pytest.raises(DimensionError, match="concat"):
        ad.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 3)))], axis=0)


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_output_raises():
    big = Tensor([1e308])
    with pytest.raises(NumericError):
        ad.mul(big, big)


def test_lookup_rows_and_duplicate_accumulation():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = ad.lookup(table, [2, 2, 0])
    assert np.array_equal(out.values, table.values[[2, 2, 0]])
    backward(out.sum())
    expect = np.zeros((4, 3))
    expect[2] = 2.0
    expect[0] = 1.0
    assert np.array_equal(table.grad, expect)
    with pytest.raises(VocabError):
        ad.lookup(table, [4])


def test_softmax_rows_normalized_random():
    rng = np.random.default_rng(123)
    for _ in range(50):
        shape = tuple(rng.integers(1, 6, size=rng.integers(1, 4)))
        axis = int(rng.integers(0, len(shape)))
        p = ad.softmax(Tensor(rng.normal(scale=8.0, size=shape)), axis=axis)
        assert np.all(p.values > 0.0) and np.all(p.values < 1.0 + 1e-15)
        sums = p.values.sum(axis=axis)
        assert np.allclose(sums, 1.0, atol=1e-9)


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(7)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        y = ad.tanh(a @ b)
        loss = (y * y).sum()
        backward(loss)
        return loss.item(), a.grad.copy(), b.grad.copy()

    l1, ga1, gb1 = run()
    l2, ga2, gb2 = run()
    assert l1 == l2
    assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)


def test_no_grad_blocks_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert y.node is None and not y.requires_grad


# --- randomized gradient checks for every primitive ------------------------

def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


@pytest.mark.parametrize("seed", range(3))
def test_primitive_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 5))  # fixed mixing weights make gradients generic

    cases = []

    x = _rand(rng, 3, 5)
    cases.append((lambda t: (ad.tanh(t) * w).sum(), x))
    cases.append((lambda t: (ad.sigmoid(t) * w).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: (ad.softmax(t, axis=1) * w).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: (ad.reduce_max(t, axis=1) * w[:, 0]).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: ad.reduce_sum(t * t, axis=0, keepdims=True).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: (ad.reshape(t, (5, 3)) * w.T).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: (ad.transpose(t) * w.T).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: ad.scale(t, -2.5).sum(), _rand(rng, 3, 5)))

    m = rng.normal(size=(3, 5))
    cases.append((lambda t: (ad.mul(t, m) * w).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: (ad.add(t, m[0]) * w).sum(), _rand(rng, 3, 5)))  # broadcast add
    cases.append((lambda t: (ad.oplus(t, Tensor(m[:, 0])) * w).sum(), _rand(rng, 3, 5)))
    cases.append((lambda t: (ad.oplus(Tensor(m), t) * w).sum(), _rand(rng, 3)))

    b2 = rng.normal(size=(5, 2))
    cases.append((lambda t: (ad.matmul(t, b2) * w[:, :2]).sum(), _rand(rng, 3, 5)))
    a2 = rng.normal(size=(3, 5))
    cases.append((lambda t: (ad.matmul(a2, t) * w[:, :2]).sum(), _rand(rng, 5, 2)))
    # batched matmul with broadcast of the left operand
    v3 = rng.normal(size=(4, 5, 2))
    w3 = rng.normal(size=(4, 3, 2))
    cases.append((lambda t: (ad.matmul(t, Tensor(v3)) * w3).sum(), _rand(rng, 3, 5)))
    # vector promotion
    cases.append((lambda t: (ad.matmul(a2, t) * w[:, 0]).sum(), _rand(rng, 5)))
    cases.append((lambda t: (ad.matmul(t, b2) * w[0, :2]).sum(), _rand(rng, 5)))

    other = rng.normal(size=(3, 2))
    wcat = rng.normal(size=(3, 7))
    cases.append((lambda t: (ad.concat([t, Tensor(other)], axis=1) * wcat).sum(),
                  _rand(rng, 3, 5)))
    wrows = rng.normal(size=(4, 5))
    cases.append((lambda t: (ad.lookup(t, [0, 2, 2, 1]) * wrows).sum(), _rand(rng, 3, 5)))

    targets = rng.integers(0, 5, size=3)
    cases.append((lambda t: (ad.cross_entropy_with_logits(t, targets) * w[:, 0]).sum(),
                  _rand(rng, 3, 5)))

    for f, x in cases:
        check_grad(f, x)


def test_cross_entropy_matches_log_softmax_oracle():
    rng = np.random.default_rng(42)
    logits = rng.normal(scale=3.0, size=(6, 9))
    targets = rng.integers(0, 9, size=6)
    got = ad.cross_entropy_with_logits(Tensor(logits), targets).values
    for i in range(6):
        row = logits[i]
        p = np.exp(row) / np.exp(row).sum()
        assert abs(got[i] - (-math.log(p[targets[i]]))) < 1e-12


def test_cross_entropy_extreme_logits_stable():
    out = ad.cross_entropy_with_logits(Tensor([[1000.0, 0.0], [-1000.0, 0.0]]), [0, 0])
    assert out.values[0] == 0.0
    assert out.values[1] == 1000.0
