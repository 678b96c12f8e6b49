import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stgasnet.tensor import (
    ContractError,
    ParameterSet,
    ShapeError,
    Tensor,
    backward,
    concat,
    conv2d,
    mean,
    mul,
    pointwise,
    sigmoid,
    split_channels,
    sqrt,
    square,
    tanh,
    tsum,
)

from oracles import conv_ref, numeric_grad, sliding_sum_ref


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def test_identity_1x1_kernel():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 4)).astype(np.float32)
    k = np.eye(3, dtype=np.float32)[:, :, None, None]
    out = conv2d(Tensor(x), Tensor(k))
    assert np.array_equal(out.data, x)


def test_zero_kernel_gives_zero():
    x = Tensor(np.random.default_rng(1).normal(size=(1, 2, 6, 6)))
    out = conv2d(x, Tensor(np.zeros((3, 2, 3, 3))))
    assert out.shape == (1, 3, 6, 6)
    assert not out.data.any()


@pytest.mark.parametrize("pos", [(3, 3), (0, 0), (0, 5), (6, 2)])
def test_ones_kernel_on_impulse(pos):
    img = np.zeros((7, 6))
    img[pos] = 1.0
    out = conv2d(Tensor(img[None, None]), Tensor(np.ones((1, 1, 3, 3)))).data[0, 0]
    expected = sliding_sum_ref(img, 3, 3)
    assert np.array_equal(out, expected)
    r, c = pos
    block = np.zeros_like(img)
    block[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = 1
    assert np.array_equal(out, block)


def test_conv_matches_scipy_correlate():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 7, 5))
    k = rng.normal(size=(4, 3, 5, 3))
    assert np.allclose(conv2d(Tensor(x), Tensor(k)).data, conv_ref(x, k), atol=1e-12)


def test_conv_errors():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 2, 2, 2))))


def test_pointwise_values():
    zero = Tensor(np.zeros(3))
    assert np.all(pointwise("sigmoid", zero).data == 0.5)
    assert np.all(pointwise("tanh", zero).data == 0.0)
    x = Tensor(np.array([1.5, -2.0, 3.0]))
    assert np.all(pointwise("hadamard", x, zero).data == 0.0)
    assert math.isclose(float(sigmoid(Tensor(np.array(1.0))).data), 0.7310585786, abs_tol=1e-10)
    # high-precision value of 1/(1+e^-1)
    assert math.isclose(float(sigmoid(Tensor(np.array(1.0))).data), 1 / (1 + math.exp(-1)), rel_tol=1e-15)
    with pytest.raises(ContractError):
        pointwise("relu", zero)


def test_sigmoid_saturates_without_overflow():
    out = sigmoid(Tensor(np.array([-1e4, 1e4], dtype=np.float32))).data
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[1] == 1.0


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        concat([Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((1, 2, 4, 3)))], axis=1)


def test_backward_sum_of_squares():
    w = leaf([1.0, 2.0])
    backward(tsum(mul(w, w)))
    assert np.array_equal(w.grad, [2.0, 4.0])


def test_backward_accumulates_and_clears():
    w = leaf([1.0, 2.0])
    backward(tsum(mul(w, w)))
    backward(tsum(mul(w, w)))
    assert np.array_equal(w.grad, [4.0, 8.0])
    w.zero_grad()
    assert not w.grad.any()


def test_independent_parameter_has_zero_grad():
    w = leaf([1.0, 2.0])
    p = leaf([3.0])
    backward(tsum(square(w)))
    assert np.array_equal(p.grad, [0.0])


def test_backward_requires_scalar():
    w = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        backward(mul(w, w))


def test_float32_stays_float32():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    y = (x * 0.5 + 1.0 - x) / 2.0
    assert y.dtype == np.float32


def _check_op_grad(make_loss, arrays, rng, tol=1e-4):
    leaves = [leaf(a) for a in arrays]
    backward(make_loss(*leaves))
    for t in leaves:
        flat = t.data.reshape(-1)

        def f():
            return float(make_loss(*[Tensor(l.data) for l in leaves]).data)

        for idx in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            num = numeric_grad(f, flat, idx)
            ana = t.grad.reshape(-1)[idx]
            assert abs(num - ana) <= tol * max(abs(num), abs(ana), 1e-6), (num, ana)


OPS = {
    "sigmoid": (lambda a: tsum(mul(sigmoid(a), a)), 1),
    "tanh": (lambda a: tsum(mul(tanh(a), a)), 1),
    "hadamard": (lambda a, b: tsum(mul(mul(a, b), a)), 2),
    "add_sub": (lambda a, b: tsum(square((a + b) - mul(a, 0.3))), 2),
    "div_sqrt": (lambda a, b: tsum(mul(a, 1.0) / (sqrt(square(b) + 1.0))), 2),
    "concat_split": (lambda a, b: tsum(square(split_channels(concat([a, b], axis=1), [1, 3])[1])), 2),
    "conv": (lambda a, b: tsum(square(conv2d(a, b))), None),
    "mean_axes": (lambda a, b: tsum(square(mean(mul(a, b), axis=(0, 2, 3)))), 2),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradients_match_finite_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    fn, nargs = OPS[name]
    if name == "conv":
        arrays = [rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 3, 3))]
    elif name == "concat_split":
        arrays = [rng.normal(size=(2, 1, 3, 4)), rng.normal(size=(2, 3, 3, 4))]
    else:
        arrays = [rng.normal(size=(2, 2, 3, 4)) for _ in range(nargs)]
    _check_op_grad(fn, arrays, rng)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_concat_then_slice_roundtrip(c1, c2, h, seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(2, c1, h, 3)))
    b = Tensor(rng.normal(size=(2, c2, h, 3)))
    pa, pb = split_channels(concat([a, b], axis=1), [c1, c2])
    assert np.array_equal(pa.data, a.data) and np.array_equal(pb.data, b.data)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3, 5]))
def test_conv_gradient_property(seed, ksize):
    rng = np.random.default_rng(seed)
    _check_op_grad(lambda a, b: tsum(mul(conv2d(a, b), conv2d(a, b))),
                   [rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(2, 2, ksize, ksize))], rng)


def test_determinism_bit_identical():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 8, 8)).astype(np.float32)
    k = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
    runs = []
    for _ in range(2):
        kt = Tensor(k.copy(), requires_grad=True)
        out = tsum(square(tanh(conv2d(Tensor(x), kt))))
        backward(out)
        runs.append((out.data.tobytes(), kt.grad.tobytes()))
    assert runs[0] == runs[1]


def test_parameter_set_unique_and_ordered():
    ps = ParameterSet()
    ps["b"] = Tensor(np.zeros(2))
    ps["a"] = Tensor(np.ones(3))
    assert list(ps) == ["b", "a"]
    assert all(p.requires_grad for p in ps.values())
    with pytest.raises(KeyError):
        ps["a"] = Tensor(np.zeros(1))
    assert ps.num_values() == 5
