"""Derivative-free box-constrained maximization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

_BIG = 1e300


@dataclass
class OptResult:
    x: np.ndarray
    fun: float
    converged: bool
    nfev: int
    message: str = ""


def maximize(fun, x0, bounds, xatol: float = 1e-5, maxiter: int = 500) -> OptResult:
    """Maximize ``fun`` over a box.

    One-dimensional problems use bounded Brent (golden-section safeguarded);
    otherwise Nelder-Mead with the simplex projected onto the box, stopping
    once the simplex spans less than ``xatol`` in every coordinate.
    """
    x0 = np.clip(np.asarray(x0, dtype=float).ravel(), [b[0] for b in bounds], [b[1] for b in bounds])

    def neg(x):
        v = fun(np.atleast_1d(x))
        return _BIG if not np.isfinite(v) else -v

    if x0.size == 1:
        lo, hi = bounds[0]
        res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                              options={"xatol": xatol, "maxiter": maxiter})
        x = np.array([res.x])
        out = OptResult(x, -res.fun, bool(res.success), int(res.nfev), str(res.message))
    else:
        span = np.array([b[1] - b[0] for b in bounds])
        step = np.minimum(0.1 * span, np.maximum(0.05 * np.abs(x0), 0.05))
        simplex = [x0]
        for i in range(x0.size):
            v = x0.copy()
            v[i] = v[i] + step[i] if v[i] + step[i] <= bounds[i][1] else v[i] - step[i]
            simplex.append(v)
        res = minimize(neg, x0, method="Nelder-Mead", bounds=bounds,
                       options={"xatol": xatol, "fatol": 1e-9, "maxiter": maxiter,
                                "initial_simplex": np.array(simplex)})
        out = OptResult(np.asarray(res.x), -res.fun, bool(res.success), int(res.nfev), str(res.message))
    # never return something worse than the starting point
    f0 = fun(x0)
    if np.isfinite(f0) and (not np.isfinite(out.fun) or f0 > out.fun):
        out = OptResult(x0, float(f0), out.converged, out.nfev + 1, out.message)
    return out
