#!/usr/bin/env python3
"""
Gradient Check Component - central finite differences and the check registry

The finite-difference oracle certifies every backward rule in the package.
Suites register themselves with a CheckRegistry; the gradcheck subcommand runs
whatever is registered and reports the worst relative error per check.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from components.autodiff import Tensor, backward
from components.errors import ContractError, GradcheckError, NumericsError

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-5
DEFAULT_REL_TOL = 1e-4
DEFAULT_ABS_FLOOR = 1e-7


def _as_float(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(np.asarray(value).reshape(-1)[0])


def finite_difference_gradient(f: Callable, x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """
    Central-difference gradient of a scalar function

    Args:
        f (callable): maps an array shaped like x to a scalar (float or Tensor)
        x: point to differentiate at
        eps (float): step size

    Returns:
        np.ndarray: (f(x + eps e_k) - f(x - eps e_k)) / (2 eps) for every coordinate k

    Raises:
        ContractError: If eps is not positive
        NumericsError: If f is not finite at a perturbed point
    """
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    point = np.array(x, dtype=np.float64)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        original = point[index]
        point[index] = original + eps
        f_plus = _as_float(f(point.copy()))
        point[index] = original - eps
        f_minus = _as_float(f(point.copy()))
        point[index] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericsError(f"non-finite function value near coordinate {index}")
        grad[index] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(analytic, numeric, rel_tol: float = DEFAULT_REL_TOL,
                   abs_floor: float = DEFAULT_ABS_FLOOR) -> float:
    """
    Worst elementwise relative error, with differences below abs_floor treated as exact

    A result <= rel_tol means |a - n| <= max(rel_tol * max(|a|, |n|), abs_floor) everywhere.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ContractError(f"gradient shapes differ: {analytic.shape} vs {numeric.shape}")
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor / rel_tol)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / scale))


def compare_parameter_gradients(
    build_loss: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = DEFAULT_EPS,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Autodiff vs finite differences for every named parameter of a loss

    Args:
        build_loss (callable): rebuilds the scalar loss from the current parameter values
        params (Mapping[str, Tensor]): parameters to perturb
        eps (float): finite-difference step

    Returns:
        list: (analytic, numeric) gradient pairs, one per parameter
    """
    analytic = backward(build_loss(), params)
    pairs = []
    for name, tensor in params.items():
        saved = tensor.data

        def f(values, tensor=tensor):
            tensor.data = values
            return build_loss()

        try:
            numeric = finite_difference_gradient(f, saved, eps)
        finally:
            tensor.data = saved
        pairs.append((analytic[name], numeric))
    return pairs


@dataclass
class CheckResult:
    """Outcome of one registered check"""

    name: str
    worst_error: float
    instances: int
    passed: bool
    message: str = ""


CheckFn = Callable[[], Sequence[Tuple[np.ndarray, np.ndarray]]]


class CheckRegistry:
    """Named finite-difference suites"""

    def __init__(self, rel_tol: float = DEFAULT_REL_TOL, abs_floor: float = DEFAULT_ABS_FLOOR):
        self.rel_tol = rel_tol
        self.abs_floor = abs_floor
        self._checks: Dict[str, CheckFn] = {}

    def __len__(self):
        return len(self._checks)

    def names(self) -> List[str]:
        return list(self._checks)

    def register(self, name: str):
        """Decorator registering a function that returns (analytic, numeric) pairs"""
        def decorator(fn: CheckFn) -> CheckFn:
            if name in self._checks:
                raise ContractError(f"gradient check '{name}' registered twice")
            self._checks[name] = fn
            return fn
        return decorator

    def run(self, progress_callback: Optional[Callable[[str], None]] = None) -> List[CheckResult]:
        """
        Run every registered check

        Raises:
            GradcheckError: If no checks are registered
        """
        if not self._checks:
            raise GradcheckError("no checks registered")
        results = []
        for name, fn in self._checks.items():
            self._log(f"Running gradient check: {name}", progress_callback)
            try:
                pairs = list(fn())
                worst = max((relative_error(a, n, self.rel_tol, self.abs_floor) for a, n in pairs),
                            default=0.0)
                result = CheckResult(name, worst, len(pairs), worst <= self.rel_tol)
            except (NumericsError, ContractError) as e:
                result = CheckResult(name, float("inf"), 0, False, str(e))
            results.append(result)
        return results

    def _log(self, message: str, callback: Optional[Callable[[str], None]] = None):
        if callback:
            callback(message)
        else:
            logger.info(message)


# Suites in components.gradcheck_suites register here
DEFAULT_REGISTRY = CheckRegistry()
