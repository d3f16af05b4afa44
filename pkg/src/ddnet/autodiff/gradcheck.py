from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import ContractError, NumericError
from .tensor import Tensor


def _pick(size: int, coords: Optional[int], rng) -> np.ndarray:
    if coords is None or coords >= size:
        return np.arange(size)
    rng = rng if rng is not None else np.random.default_rng(0)
    return rng.choice(size, size=coords, replace=False)


def _compare(evaluate: Callable[[np.ndarray], float], base: np.ndarray,
             analytic: np.ndarray, eps: float, idx: np.ndarray) -> float:
    worst = 0.0
    probe = base.copy()
    flat = probe.reshape(-1)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = evaluate(probe)
        flat[i] = orig - eps
        fm = evaluate(probe)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite value while probing coordinate {i}")
        numeric = (fp - fm) / (2 * eps)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
    return float(worst)


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5,
               coords: Optional[int] = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    Per-coordinate error is ``|a - n| / max(1, |a|, |n|)``.  ``coords`` limits
    probing to a random subset of coordinates for large inputs.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError(f"eps={eps} outside [1e-6, 1e-3]")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    xt = Tensor(base.copy(), requires_grad=True)
    out = f(xt)
    if out.size != 1:
        raise ContractError("grad_check needs a scalar function")
    out.backward()
    analytic = xt.grad if xt.grad is not None else np.zeros_like(base)
    return _compare(lambda arr: f(Tensor(arr)).item(), base, analytic, eps,
                    _pick(base.size, coords, rng))


def grad_check_param(loss_fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-5,
                     coords: Optional[int] = None,
                     rng: np.random.Generator | None = None) -> float:
    """Like :func:`grad_check` for a parameter read in place by ``loss_fn``."""
    if not 1e-6 <= eps <= 1e-3:
        raise ContractError(f"eps={eps} outside [1e-6, 1e-3]")
    saved = param.data
    param.grad = None
    loss_fn().backward()
    analytic = param.grad if param.grad is not None else np.zeros_like(saved)
    param.grad = None

    def evaluate(arr: np.ndarray) -> float:
        param.data = arr
        try:
            return loss_fn().item()
        finally:
            param.data = saved

    return _compare(evaluate, saved, analytic, eps, _pick(saved.size, coords, rng))
