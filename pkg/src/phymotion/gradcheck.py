"""Central finite-difference gradient checking for the autodiff engine."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numerical_grad(fn, arrays, step=1e-3):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each float64 array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = arr[i]
            arr[i] = orig + step
            fp = float(fn(*arrays))
            arr[i] = orig - step
            fm = float(fn(*arrays))
            arr[i] = orig
            g[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_grad(build, arrays, step=1e-3):
    """Compare backprop against finite differences for ``build(*tensors) -> scalar Tensor``.

    ``arrays`` are cast to float64.  Returns the largest relative error over inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*leaves)
    out.backward()
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def fn(*arrs):
        return build(*[Tensor(a) for a in arrs]).data

    numeric = numerical_grad(fn, arrays, step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def check_module_grad(module, loss_fn, step=1e-3, max_params=None, rng=None):
    """Finite-difference check of ``loss_fn()`` w.r.t. a module's parameters (float64).

    ``max_params`` limits how many scalar entries per parameter are probed,
    chosen with ``rng``.  Returns the relative error over all probed entries.
    """
    module.astype(np.float64)
    module.zero_grad()
    loss_fn().backward()
    rng = rng or np.random.default_rng(0)
    all_ana, all_num = [], []
    for name, p in module.named_parameters():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = np.arange(p.size)
        if max_params is not None and p.size > max_params:
            flat = rng.choice(p.size, size=max_params, replace=False)
        for k in flat:
            idx = np.unravel_index(k, p.shape)
            orig = p.data[idx]
            p.data[idx] = orig + step
            fp = float(loss_fn().data)
            p.data[idx] = orig - step
            fm = float(loss_fn().data)
            p.data[idx] = orig
            all_num.append((fp - fm) / (2.0 * step))
            all_ana.append(analytic[idx])
    module.zero_grad()
    return relative_error(np.array(all_ana), np.array(all_num))
