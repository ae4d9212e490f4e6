#!/usr/bin/env python3
"""
Optimizer Component - global-norm gradient clipping and AdamW
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from components.autodiff import Tensor
from components.errors import ContractError, NumericsError


@dataclass
class OptimizerState:
    """
    AdamW state exclusively owned by the training loop

    Moments are keyed by parameter name and created lazily on the first step.
    """

    lr: float = 1e-5
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    max_grad_norm: float = 5.0
    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ContractError("lr and weight_decay must be >= 0 and eps > 0")
        beta1, beta2 = self.betas
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ContractError(f"betas must lie in [0, 1), got {self.betas}")
        self.betas = (float(beta1), float(beta2))


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    """
    Rescale all gradients together when their global L2 norm exceeds max_norm

    Args:
        grads (Mapping[str, np.ndarray]): parameter name -> gradient
        max_norm (float): largest allowed global norm

    Returns:
        dict: the clipped gradients (new arrays; inputs are left untouched)
    """
    if max_norm <= 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return {name: g.copy() for name, g in grads.items()}
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def adamw_step(state: OptimizerState, params: Mapping[str, Tensor],
               grads: Mapping[str, np.ndarray]) -> OptimizerState:
    """
    One decoupled-weight-decay Adam update, applied to params in place

    Args:
        state (OptimizerState): moments and hyperparameters (step is incremented first)
        params (Mapping[str, Tensor]): named parameters
        grads (Mapping[str, np.ndarray]): gradients keyed like params

    Returns:
        OptimizerState: the same state object, advanced by one step

    Raises:
        NumericsError: If any gradient contains NaN or infinity
        ContractError: If a gradient is missing or has the wrong shape
    """
    for name, tensor in params.items():
        if name not in grads:
            raise ContractError(f"no gradient for parameter '{name}'")
        if grads[name].shape != tensor.shape:
            raise ContractError(f"gradient shape {grads[name].shape} != parameter shape "
                                f"{tensor.shape} for '{name}'")
        if not np.all(np.isfinite(grads[name])):
            raise NumericsError(f"non-finite gradient for parameter '{name}'")

    state.step += 1
    beta1, beta2 = state.betas
    bias_correction1 = 1.0 - beta1 ** state.step
    bias_correction2 = 1.0 - beta2 ** state.step

    for name, tensor in params.items():
        grad = grads[name]
        m = state.exp_avg.get(name)
        v = state.exp_avg_sq.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.exp_avg[name] = m
        state.exp_avg_sq[name] = v

        # Decoupled decay acts on the pre-update weights
        data = tensor.data
        if state.weight_decay != 0.0:
            data = data * (1.0 - state.lr * state.weight_decay)
        denom = np.sqrt(v / bias_correction2) + state.eps
        tensor.data = data - (state.lr / bias_correction1) * m / denom
    return state
