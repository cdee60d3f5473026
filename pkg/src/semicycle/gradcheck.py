"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError
from .tensor import Tensor, backward


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5,
               indices: Sequence[int] | None = None) -> float:
    """Max relative error between the tape gradient of ``f`` at ``x`` and central differences.

    ``indices`` restricts the comparison to a subset of flat positions, which keeps
    checks over large parameter tensors affordable.
    """
    if x.data.dtype != np.float64:
        raise ContractError("grad_check requires a double-precision input")
    base = x.data.copy()

    x.grad = None
    x.requires_grad = True
    out = f(x)
    again = f(Tensor(base, dtype=np.float64)).data
    if not np.array_equal(out.data, again):
        raise ContractError("f is not deterministic; fix its noise seeds")
    backward(out)
    analytic = x.grad.ravel().copy()
    x.grad = None

    flat = x.data.reshape(-1)
    picks = range(flat.size) if indices is None else indices
    worst = 0.0
    for i in picks:
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x).data)
        flat[i] = orig - step
        fm = float(f(x).data)
        flat[i] = orig
        numeric = (fp - fm) / (2 * step)
        a = analytic[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def check_params(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], step: float = 1e-5,
                 samples: int = 6, seed: int = 0) -> dict[str, float]:
    """Finite-difference check of ``loss_fn`` against a few entries of every named parameter.

    Returns the max relative error per parameter name.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    out = loss_fn()
    if not np.array_equal(out.data, loss_fn().data):
        raise ContractError("loss is not deterministic; fix its noise seeds")
    backward(out)
    grads = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
             for name, p in params.items()}
    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = min(samples, flat.size)
        worst = 0.0
        for i in rng.choice(flat.size, size=n, replace=False):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(loss_fn().data)
            flat[i] = orig - step
            fm = float(loss_fn().data)
            flat[i] = orig
            numeric = (fp - fm) / (2 * step)
            a = grads[name].reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
        report[name] = worst
    for p in params.values():
        p.grad = None
    return report
