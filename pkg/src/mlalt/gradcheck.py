"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ALTError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    per_input: list = field(default_factory=list)
    message: str = ""


SCALE_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = SCALE_FLOOR) -> float:
    """Max abs difference scaled by the larger of the two gradients' max magnitudes.

    The scale never drops below ``floor``: gradients that vanish identically
    (e.g. attention key biases, which softmax ignores) would otherwise compare
    round-off noise against round-off noise.
    """
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _scalar(value) -> float:
    v = float(value.data.reshape(-1)[0]) if isinstance(value, Tensor) else float(value)
    if not np.isfinite(v):
        raise FloatingPointError("non-finite function value")
    return v


def numeric_gradient(f: Callable[[], object], x: Tensor, step: float = 1e-5,
                     indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. ``x`` (perturbed in place, then restored)."""
    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        up = _scalar(f())
        flat[i] = orig - step
        down = _scalar(f())
        flat[i] = orig
        grad[i] = (up - down) / (2 * step)
    return grad.reshape(x.shape)


def grad_check(f: Callable[..., Tensor], inputs, step: float = 1e-5, tol: float = 1e-4,
               max_entries: Optional[int] = None, seed: int = 0) -> GradCheckReport:
    """Compare autodiff against central differences for every tensor in ``inputs``.

    ``f(*inputs)`` must return a scalar tensor.  Never raises: failures,
    including NaN outputs, are reported.  With ``max_entries`` only a random
    subset of entries per input is differenced.
    """
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    rng = np.random.default_rng(seed)
    try:
        for x in xs:
            x.requires_grad = True
            x.grad = None
        out = f(*xs)
        out.backward()
        per_input = []
        for x in xs:
            analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
            if max_entries is not None and x.size > max_entries:
                idx = np.sort(rng.choice(x.size, size=max_entries, replace=False))
            else:
                idx = np.arange(x.size)
            numeric = numeric_gradient(lambda: f(*xs), x, step, idx)
            err = relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx])
            per_input.append(err)
    except (ALTError, FloatingPointError, ValueError) as exc:
        return GradCheckReport(float("inf"), False, [], f"evaluation failed: {exc}")
    worst = max(per_input, default=0.0)
    passed = bool(worst < tol)
    return GradCheckReport(worst, passed, per_input, "ok" if passed else f"max rel. error {worst:.3g} >= {tol}")
