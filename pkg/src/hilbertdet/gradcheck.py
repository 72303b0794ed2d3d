"""Central finite-difference verification of tape gradients.

The checker re-runs the forward function around perturbed leaf entries, so it
is independent of the adjoint code it validates.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_check(fn, leaves: dict[str, Tensor], step: float = 1e-3,
                            max_entries_per_leaf: int | None = None,
                            rng: np.random.Generator | None = None) -> float:
    """Compare tape gradients of scalar fn() against central differences.

    fn is a zero-argument callable reading the leaf tensors and returning a
    one-element Tensor. Returns the maximum guarded relative error
    |fd - tape| / max(1, |fd|, |tape|) over all probed entries. When
    max_entries_per_leaf is set, a deterministic subsample of entries is
    probed per leaf (for composite blocks whose full census would be slow).
    """
    for t in leaves.values():
        t.grad = None
    loss = fn()
    if loss.size != 1:
        raise ValueError("finite_difference_check requires a scalar loss")
    loss.backward()

    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for name, t in leaves.items():
        flat = t.data.reshape(-1)
        analytic = (np.zeros_like(flat) if t.grad is None
                    else t.grad.reshape(-1))
        n = flat.size
        if max_entries_per_leaf is not None and n > max_entries_per_leaf:
            idx = rng.choice(n, size=max_entries_per_leaf, replace=False)
        else:
            idx = np.arange(n)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            up = fn().item()
            flat[i] = keep - step
            down = fn().item()
            flat[i] = keep
            fd = (up - down) / (2.0 * step)
            a = analytic[i]
            err = abs(fd - a) / max(1.0, abs(fd), abs(a))
            if err > worst:
                worst = err
    return worst
