"""Shared numerical oracles for the test suite."""

import numpy as np

from subgoal_mpc.autodiff import Tensor


def numeric_grad(f, x: np.ndarray, h: float = 1e-4, refine: bool = False) -> np.ndarray:
    """Central finite differences of scalar f at x, elementwise.

    refine=True adds one Richardson step (same h, plus h/2 samples) to
    cancel the leading O(h^2) truncation term; useful for deep composite
    losses whose curvature along a parameter would otherwise dominate the
    comparison.
    """
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.ravel()
    gflat = g.ravel()

    def central(i, step):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        return (fp - fm) / (2 * step)

    for i in range(flat.size):
        d = central(i, h)
        if refine:
            d = (4.0 * central(i, h / 2) - d) / 3.0
        gflat[i] = d
    return g


def check_gradients(loss_fn, params: list[Tensor], h: float = 1e-4,
                    rtol: float = 1e-3, refine: bool = False):
    """Compare analytic grads of loss_fn() against central differences.

    loss_fn must rebuild the graph from the params' current .data on every
    call. Returns the worst relative error seen.
    """
    loss = loss_fn()
    for p in params:
        p.grad = np.zeros_like(p.data)
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        num = numeric_grad(lambda: loss_fn().item(), p.data, h=h, refine=refine)
        denom = np.maximum(np.abs(num), np.abs(a))
        err = np.abs(a - num) / np.maximum(denom, 1e-6)
        worst = max(worst, err.max())
        assert err.max() <= rtol, f"gradient mismatch: rel err {err.max():.2e}"
    return worst
