"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

STEP = 1e-4
REL_TOL = 1e-4


def numeric_grad(f, x, step=STEP):
    """Central differences of scalar ``f`` w.r.t. every entry of array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + step
        up = f()
        x[idx] = old - step
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * step)
    return g


def relative_error(analytic, numeric):
    """Elementwise |a - n| / max(|a|, |n|), with a floor for entries that are ~0."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return np.max(np.abs(analytic - numeric) / scale)
