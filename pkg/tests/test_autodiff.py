import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from memonet import autodiff as ad
from memonet.autodiff import Tape, Value
from memonet.errors import ContractError, DimensionError, NumericError
from memonet.gradcheck import op_cases

OP_NAMES = [name for name, _, _ in op_cases(0)]

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize("name", OP_NAMES)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_op_matches_finite_differences(name, seed):
    fn, leaves = next((f, lv) for n, f, lv in op_cases(seed) if n == name)
    errs = ad.gradcheck(fn, leaves)
    assert max(errs.values()) < 1e-7, errs


def test_matmul_known_gradient():
    a = Value([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    b = Value([[5.0], [6.0]], requires_grad=True)
    with Tape() as tape:
        tape.backward(ad.reduce_sum(ad.matmul(a, b)))
    assert np.array_equal(a.grad, [[5.0, 6.0], [5.0, 6.0]])
    assert np.array_equal(b.grad, [[4.0], [6.0]])


def test_softmax_cross_entropy_gradient_is_p_minus_onehot():
    x = Value([0.1, -0.4, 2.0], requires_grad=True)
    with Tape() as tape:
        p = ad.softmax(x)
        tape.backward(ad.cross_entropy(p, 2))
    expect = p.data - np.array([0.0, 0.0, 1.0])
    assert np.allclose(x.grad, expect, atol=1e-12)


def test_leaf_gradients_accumulate_across_backward_calls():
    x = Value([1.0, -2.0], requires_grad=True)
    with Tape() as tape:
        loss = ad.reduce_sum(ad.square(x))
        tape.backward(loss)
        tape.backward(loss)
    assert np.array_equal(x.grad, 4.0 * x.data)
    x.zero_grad()
    assert np.array_equal(x.grad, [0.0, 0.0])


def test_reused_value_sums_both_paths():
    x = Value(3.0, requires_grad=True)
    with Tape() as tape:
        tape.backward(ad.mul(x, x))
    assert x.grad == pytest.approx(6.0)


def test_no_grad_records_nothing():
    x = Value([1.0], requires_grad=True)
    with Tape() as tape, ad.no_grad():
        ad.exp(x)
    assert len(tape) == 0


def test_constants_are_not_recorded():
    with Tape() as tape:
        ad.add(Value([1.0]), Value([2.0]))
    assert len(tape) == 0


def test_backward_rejects_non_scalar():
    x = Value([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ad.exp(x)
        with pytest.raises(DimensionError):
            tape.backward(y)


def test_backward_rejects_foreign_loss():
    with Tape():
        loss = ad.reduce_sum(ad.exp(Value([1.0], requires_grad=True)))
    with Tape() as other, pytest.raises(ContractError):
        other.backward(Value(1.0))
    assert loss.data.size == 1


def test_softmax_nan_raises():
    with pytest.raises(NumericError):
        ad.softmax(Value([0.0, np.nan]))


def test_dropout_rate_validated():
    with pytest.raises(ValueError):
        ad.dropout(Value([1.0]), 1.0, True, np.random.default_rng(0))
    with pytest.raises(ContractError):
        ad.dropout(Value([1.0]), 0.5, True, None)


def test_dropout_eval_is_identity():
    x = Value(np.arange(4.0))
    assert ad.dropout(x, 0.5, False, None) is x


def test_cross_entropy_target_out_of_range():
    with pytest.raises(IndexError):
        ad.cross_entropy(Value([0.5, 0.5]), 2)


def test_cross_entropy_clamps_log():
    loss = ad.cross_entropy(Value([1.0, 0.0]), 1)
    assert float(loss.data) == pytest.approx(-np.log(1e-12))


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(Value(np.ones((2, 3))), Value(np.ones((2, 3))))


def test_layer_norm_requires_width_two():
    with pytest.raises(DimensionError):
        ad.layer_norm(Value(np.ones((3, 1))), Value([1.0]), Value([0.0]))


def test_threads_use_separate_tapes():
    sizes = {}

    def work(name, n):
        x = Value(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x
            for _ in range(n):
                y = ad.tanh(y)
            sizes[name] = len(tape)

    threads = [threading.Thread(target=work, args=(i, i + 1)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sizes == {0: 1, 1: 2, 2: 3, 3: 4}


def test_mac_counter():
    with ad.count_macs() as c:
        ad.matmul(Value(np.ones((2, 3))), Value(np.ones((3, 5))))
    assert c["macs"] == 2 * 3 * 5


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)), elements=finite))
def test_softmax_rows_sum_to_one(x):
    y = ad.softmax(Value(x)).data
    assert np.all(y >= 0)
    assert np.allclose(y.sum(-1), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=finite))
def test_layer_norm_standardises(x):
    n = x.shape[1]
    y = ad.layer_norm(Value(x), Value(np.ones(n)), Value(np.zeros(n))).data
    assert np.allclose(y.mean(-1), 0.0, atol=1e-9)
    var = x.var(-1)
    expect = var / (var + 1e-5)
    assert np.allclose(y.var(-1), expect, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_log_sigmoid_matches_log_of_sigmoid(x):
    a = ad.log_sigmoid(Value(x)).data
    b = np.log(ad.sigmoid(Value(x)).data)
    assert np.allclose(a, b, atol=1e-10)
