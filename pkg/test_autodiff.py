#!/usr/bin/env python3
"""
Tests for the autodiff core: forward values, backward rules and error paths
"""

import numpy as np
import pytest

from components import autodiff as ad
from components.autodiff import Tensor, backward
from components.errors import ContractError, ShapeError
from components.gradcheck import finite_difference_gradient, relative_error


def test_matmul_values():
    """Identity and hand-computed products"""
    A = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(ad.matmul(np.eye(2), A).data, A)
    out = ad.matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0], [6.0]])
    assert np.array_equal(out.data, [[17.0], [39.0]])
    print("✓ PASS: matmul")


def test_softmax_uniform_and_shift_invariant():
    assert np.allclose(ad.softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3, atol=1e-15)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 6))
    shifted = ad.softmax(x + 1000.0).data
    assert np.allclose(ad.softmax(x).data, shifted, atol=1e-12)
    assert np.allclose(shifted.sum(axis=-1), 1.0)


def test_sum_gradient_is_ones():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    grads = backward(ad.tensor_sum(x), {"x": x})
    assert np.array_equal(grads["x"], np.ones((3, 4)))


def test_square_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    grads = backward((x * x).sum(), {"x": x})
    assert np.allclose(grads["x"], [2.0, 4.0])


def test_shared_node_accumulates():
    """A node used twice receives the sum of both contributions"""
    x = Tensor([3.0], requires_grad=True)
    y = ad.exp(x)
    loss = ad.add(y, y).sum()
    grads = backward(loss, {"x": x})
    assert np.allclose(grads["x"], 2.0 * np.exp(3.0))


def test_unreachable_parameter_gets_zeros():
    x = Tensor([1.0, 2.0], requires_grad=True)
    unused = Tensor([[1.0, 1.0]], requires_grad=True)
    grads = backward(x.sum(), {"x": x, "unused": unused})
    assert np.array_equal(grads["unused"], np.zeros((1, 2)))


def test_non_scalar_loss_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0, {"x": x})


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError) as info:
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    message = str(info.value)
    assert "matmul" in message
    assert "(2, 3)" in message
    with pytest.raises(ShapeError):
        ad.add(np.ones((2, 3)), np.ones((4, 5)))


def test_empty_tensor_rejected():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((0, 3)))


def _composed_loss(w: Tensor, x: np.ndarray) -> Tensor:
    h = ad.layer_norm(ad.matmul(x, w))
    a = ad.softmax(h, axis=-1)
    s = ad.sigmoid(ad.concat([h, a], axis=1))
    return ad.tensor_mean(ad.log_prob(s)) + ad.tensor_sum(ad.power(ad.relu(h), 2.0)) * 0.1


@pytest.mark.parametrize("seed", range(5))
def test_composed_graph_matches_finite_differences(seed):
    """Backward through a mixed graph agrees with central differences"""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4))
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    analytic = backward(_composed_loss(w, x), {"w": w})["w"]
    numeric = finite_difference_gradient(lambda v: _composed_loss(Tensor(v), x), w.data, 1e-5)
    assert relative_error(analytic, numeric) <= 1e-4, f"seed {seed}"


def test_backward_is_deterministic():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(3, 4))
    w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    first = backward(_composed_loss(w, x), {"w": w})["w"]
    second = backward(_composed_loss(w, x), {"w": w})["w"]
    assert np.array_equal(first, second)


def test_gather_scatters_gradient_to_repeated_rows():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    grads = backward(ad.gather(x, [0, 0, 2]).sum(), {"x": x})
    assert np.array_equal(grads["x"], [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_straight_through_forward_is_hard_backward_is_soft():
    logits = Tensor([0.2, -0.1, 0.4], requires_grad=True)
    soft = ad.softmax(logits)
    hard = np.array([0.0, 0.0, 1.0])
    st = ad.straight_through(hard, soft)
    assert np.array_equal(st.data, hard)
    weights = np.array([1.0, 2.0, 3.0])
    via_st = backward(ad.mul(st, weights).sum(), {"l": logits})["l"]
    via_soft = backward(ad.mul(ad.softmax(logits), weights).sum(), {"l": logits})["l"]
    assert np.allclose(via_st, via_soft, atol=1e-15)


_A = np.array([[0.5, 1.5, 2.0], [1.0, 0.25, 3.0]])
_B = np.array([[2.0, 0.5, 1.0], [0.75, 1.25, 0.5]])

DISPATCH_CASES = [
    ("matmul", (_A, _B.T), {}, lambda: ad.matmul(_A, _B.T)),
    ("add", (_A, _B), {}, lambda: ad.add(_A, _B)),
    ("sub", (_A, _B), {}, lambda: ad.sub(_A, _B)),
    ("mul", (_A, _B), {}, lambda: ad.mul(_A, _B)),
    ("scalar_mul", (_A, -2.5), {}, lambda: ad.scalar_mul(_A, -2.5)),
    ("power", (_A, 3.0), {}, lambda: ad.power(_A, 3.0)),
    ("log", (_A,), {}, lambda: ad.log(_A)),
    ("exp", (_A,), {}, lambda: ad.exp(_A)),
    ("sigmoid", (_A,), {}, lambda: ad.sigmoid(_A)),
    ("softmax", (_A,), {"axis": 0}, lambda: ad.softmax(_A, axis=0)),
    ("concat", (_A, _B), {"axis": 1}, lambda: ad.concat([_A, _B], axis=1)),
    ("gather", (_A, [1, 0, 1]), {}, lambda: ad.gather(_A, [1, 0, 1])),
    ("sum", (_A,), {"axis": 1}, lambda: ad.tensor_sum(_A, axis=1)),
    ("mean", (_A,), {}, lambda: ad.tensor_mean(_A)),
    ("transpose", (_A,), {}, lambda: ad.transpose(_A)),
    ("layer_norm", (_A,), {}, lambda: ad.layer_norm(_A)),
    ("relu", (_A - 1.0,), {}, lambda: ad.relu(_A - 1.0)),
    ("clip", (_A, 0.5, 2.0), {}, lambda: ad.clip(_A, 0.5, 2.0)),
    ("reshape", (_A, (3, 2)), {}, lambda: ad.reshape(_A, (3, 2))),
    ("straight_through", (np.ones_like(_A), _A), {}, lambda: ad.straight_through(np.ones_like(_A), _A)),
]


def test_dispatch_cases_cover_every_operation():
    tagged = {case[0] for case in DISPATCH_CASES}
    assert tagged == {op.value for op in ad.Op if op is not ad.Op.LEAF}


@pytest.mark.parametrize("kind,args,kwargs,direct", DISPATCH_CASES,
                         ids=[case[0] for case in DISPATCH_CASES])
def test_forward_op_matches_direct_call(kind, args, kwargs, direct):
    """Dispatch by tag gives the same node as calling the op"""
    via_tag = ad.forward_op(kind, *args, **kwargs)
    expected = direct()
    assert via_tag.op is ad.Op(kind)
    assert np.array_equal(via_tag.data, expected.data), f"{kind} differs from direct call"


def test_forward_op_accepts_enum_and_gradients_flow():
    x = Tensor(_A, requires_grad=True)
    loss = ad.forward_op(ad.Op.SUM, ad.forward_op(ad.Op.MUL, x, x))
    grads = backward(loss, {"x": x})
    assert np.allclose(grads["x"], 2.0 * _A)


@pytest.mark.parametrize("kind", ["convolve", "leaf", ""])
def test_forward_op_rejects_unknown_tags(kind):
    with pytest.raises(ContractError):
        ad.forward_op(kind, _A)
