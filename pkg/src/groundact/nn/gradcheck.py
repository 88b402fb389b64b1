"""Central finite-difference gradient verification."""

from __future__ import annotations

import numpy as np


def grad_check(f, params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Compare analytic gradients against central differences.

    `f(params) -> (loss, grads)` where grads mirrors the params dict.
    Returns max over all scalar parameters of
    |analytic - numeric| / max(1, |numeric|).
    """
    _, analytic = f(params)
    analytic = {k: np.array(v, dtype=np.float64, copy=True) for k, v in analytic.items()}
    worst = 0.0
    for key, p in params.items():
        flat = p.reshape(-1)
        aflat = analytic[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = f(params)
            flat[i] = orig - h
            lm, _ = f(params)
            flat[i] = orig
            numeric = (lp - lm) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(1.0, abs(numeric))
            if err > worst:
                worst = err
    return worst
