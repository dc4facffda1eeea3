"""Central finite differences for checking hand-written gradients."""

import numpy as np


def numerical_grad(f, params: dict, eps=1e-3, keys=None) -> dict:
    """dF/dparams by central differences; ``f`` reads ``params`` in place."""
    out = {}
    for k in keys or params:
        x = params[k]
        g = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            orig = x[i]
            x[i] = orig + eps
            fp = f()
            x[i] = orig - eps
            fm = f()
            x[i] = orig
            g[i] = (fp - fm) / (2 * eps)
        out[k] = g
    return out


def relative_error(analytic, numeric, floor=1e-8) -> float:
    """max|a - n| / max(max|n|, floor), computed per parameter array."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), floor)) if a.size else 0.0


def max_relative_error(analytic: dict, numeric: dict) -> tuple[float, str]:
    worst, where = 0.0, ""
    for k in numeric:
        e = relative_error(analytic[k], numeric[k])
        if e > worst:
            worst, where = e, k
    return worst, where
