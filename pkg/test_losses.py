#!/usr/bin/env python3
"""
Tests for the relationship loss family and the total objective
"""

import math

import numpy as np
import pytest

from components.autodiff import Tensor, backward
from components.errors import ContractError
from components.gradcheck import finite_difference_gradient, relative_error
from components.losses import (
    LossConfig, ar_loss, bce_loss, class_weights, effective_number_weight, focal_loss,
    mlm_margin_loss, object_cross_entropy, relationship_loss, total_loss,
)

CLAMP = 1e-7


def random_case(seed, shape=(4, 6)):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.02, 0.98, size=shape)
    y = (rng.uniform(size=shape) < 0.3).astype(np.float64)
    return p, y


def test_focal_values():
    assert focal_loss([0.5], [1.0], 2.0).item() == pytest.approx(0.25 * math.log(2), abs=1e-12)
    assert focal_loss([1.0], [1.0], 3.0).item() < 1e-6
    with pytest.raises(ContractError):
        focal_loss([0.5], [1.0], -0.1)


@pytest.mark.parametrize("seed", range(5))
def test_focal_gamma_zero_is_bce(seed):
    p, y = random_case(seed)
    assert abs(focal_loss(p, y, 0.0).item() - bce_loss(p, y).item()) <= 1e-12


def test_effective_number_values():
    assert effective_number_weight(7, 0.0) == 1.0
    assert effective_number_weight(1, 0.95) == pytest.approx(1.0)
    assert effective_number_weight(2, 0.9) == pytest.approx(0.1 / 0.19, abs=1e-6)
    for n in range(1, 1001):
        assert effective_number_weight(n, 1.0 - 1e-9) == pytest.approx(1.0 / n, rel=1e-4), f"n={n}"
    weights = [effective_number_weight(n, 0.99) for n in range(1, 50)]
    assert all(a > b for a, b in zip(weights, weights[1:]))


@pytest.mark.parametrize("beta", [-0.1, 1.0])
def test_effective_number_beta_range(beta):
    with pytest.raises(ContractError):
        effective_number_weight(3, beta)


def test_ar_single_class_is_ln2():
    config = LossConfig(kind="ar", gamma_pos=0.0, gamma_neg=0.0, use_class_weight=False)
    assert ar_loss([0.5], [1.0], config).item() == pytest.approx(math.log(2), abs=1e-12)


def test_ar_confident_negatives():
    config = LossConfig(use_class_weight=False)
    assert ar_loss(np.full(5, 1e-9), np.zeros(5), config).item() < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_ar_reduces_to_bce(seed):
    p, y = random_case(seed)
    config = LossConfig(kind="ar", gamma_pos=0.0, gamma_neg=0.0, use_class_weight=False)
    assert abs(ar_loss(p, y, config).item() - bce_loss(p, y).item()) <= 1e-12


def reference_ar(p, y, gamma_pos, gamma_neg, beta, counts):
    total = 0.0
    for row in range(p.shape[0]):
        for c in range(p.shape[1]):
            q = min(max(p[row, c], CLAMP), 1.0 - CLAMP)
            if y[row, c] == 1.0:
                w = (1.0 - beta) / (1.0 - beta ** counts[c])
                total += w * (1.0 - q) ** gamma_pos * -math.log(q)
            else:
                total += q ** gamma_neg * -math.log(1.0 - q)
    return total


@pytest.mark.parametrize("seed", range(10))
def test_ar_matches_scalar_reference(seed):
    p, y = random_case(seed)
    counts = list(np.random.default_rng(seed + 100).integers(1, 500, size=p.shape[1]))
    config = LossConfig(kind="ar", gamma_pos=1.0, gamma_neg=4.0, beta=0.999, class_counts=counts)
    expected = reference_ar(p, y, 1.0, 4.0, 0.999, counts)
    assert abs(ar_loss(p, y, config).item() - expected) <= 1e-10


def test_ar_gamma_order_enforced():
    with pytest.raises(ContractError):
        LossConfig(kind="ar", gamma_pos=3.0, gamma_neg=1.0)
    config = LossConfig(kind="ar")
    config.gamma_pos = 5.0
    with pytest.raises(ContractError):
        ar_loss([0.5], [1.0], config, np.ones(1))


def test_ar_down_weights_negatives_only():
    """With gamma_pos = 0 the positive branch equals BCE; negatives are strictly smaller"""
    config = LossConfig(kind="ar", gamma_pos=0.0, gamma_neg=2.0, use_class_weight=False)
    for p in np.linspace(0.05, 0.95, 19):
        assert ar_loss([p], [1.0], config).item() == pytest.approx(bce_loss([p], [1.0]).item(),
                                                                   abs=1e-14)
        assert ar_loss([p], [0.0], config).item() < bce_loss([p], [0.0]).item()


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0, 2.0, 5.0])
def test_focal_branch_monotonicity(gamma):
    grid = np.arange(1, 1000) * 1e-3
    pos = [focal_loss([p], [1.0], gamma).item() for p in grid]
    neg = [focal_loss([p], [0.0], gamma).item() for p in grid]
    assert all(a >= b for a, b in zip(pos, pos[1:]))
    assert all(a <= b for a, b in zip(neg, neg[1:]))


def test_losses_non_negative_and_finite_at_extremes():
    p = np.array([0.0, 1.0, 0.0, 1.0])
    y = np.array([0.0, 1.0, 1.0, 0.0])
    config = LossConfig(use_class_weight=False)
    for value in (bce_loss(p, y), focal_loss(p, y, 2.0), ar_loss(p, y, config)):
        assert math.isfinite(value.item()) and value.item() >= 0.0
    assert bce_loss(np.array([0.0, 1.0]), np.array([0.0, 1.0])).item() < 1e-6


def test_mlm_values():
    assert mlm_margin_loss([0.2, 0.6], [0], [1], 1.0).item() == pytest.approx(1.4)
    assert mlm_margin_loss([2.5, 0.1, 1.0], [0], [1, 2], 1.0).item() == 0.0
    assert mlm_margin_loss([0.3, 0.4], [], [0, 1]).item() == 0.0
    with pytest.raises(ContractError):
        mlm_margin_loss([0.3], [0], [], margin=0.0)


def test_class_weights():
    config = LossConfig(beta=0.9, class_counts=[1, 2])
    assert np.allclose(class_weights(config, 2), [1.0, 0.1 / 0.19])
    assert np.array_equal(class_weights(LossConfig(use_class_weight=False), 3), np.ones(3))
    with pytest.raises(ContractError):
        class_weights(config, 3)


def test_relationship_loss_averages_over_pairs():
    p, y = random_case(3)
    config = LossConfig(kind="bce")
    value = relationship_loss(Tensor(p), y, config).item()
    assert value == pytest.approx(bce_loss(p, y).item() / p.shape[0], abs=1e-12)


def test_total_loss_bce_kind_equals_reduced_ar():
    p, y = random_case(4)
    logits = Tensor(np.random.default_rng(4).normal(size=(3, 5)))
    labels = [0, 4, 2]
    bce = total_loss(logits, labels, Tensor(p), y, LossConfig(kind="bce"))
    ar = total_loss(logits, labels, Tensor(p), y,
                    LossConfig(kind="ar", gamma_pos=0.0, gamma_neg=0.0, use_class_weight=False))
    assert abs(bce.item() - ar.item()) <= 1e-12


def test_total_loss_perfect_predictions():
    logits = Tensor(np.array([[50.0, 0.0], [0.0, 50.0]]))
    y = np.array([[1.0, 0.0, 1.0]])
    value = total_loss(logits, [0, 1], Tensor(y), y, LossConfig(use_class_weight=False))
    assert value.item() < 1e-5


def test_total_loss_without_pairs_is_object_term():
    logits = Tensor(np.random.default_rng(5).normal(size=(2, 3)))
    value = total_loss(logits, [1, 2], None, None, LossConfig())
    assert value.item() == pytest.approx(object_cross_entropy(logits, [1, 2]).item())
    assert total_loss(None, [], None, None, LossConfig()).item() == 0.0


@pytest.mark.parametrize("kind", ["bce", "focal", "mlm", "ar"])
def test_total_loss_gradient_matches_finite_differences(kind):
    p, y = random_case(6, shape=(3, 4))
    config = LossConfig(kind=kind, class_counts=[3, 1, 10, 2])
    scores = Tensor(p, requires_grad=True)
    analytic = backward(total_loss(None, [], scores, y, config), {"p": scores})["p"]
    numeric = finite_difference_gradient(
        lambda v: total_loss(None, [], Tensor(v), y, config), p)
    assert relative_error(analytic, numeric) <= 1e-4
