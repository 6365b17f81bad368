"""Vectorized adaptive Simpson quadrature for integrals starting at zero.

Every upper limit ``t_i`` gets its own stack of geometrically shrinking
panels ``[t_i r^(k+1), t_i r^k]`` so that integrands with an infinite slope
(or a blow-up of their derivative) at the origin are still resolved.  All
panels of all points are refined together, one numpy pass per level.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["integrate_from_zero", "RTOL", "ATOL"]

RTOL = 1e-10
ATOL = 1e-14

_PANEL_RATIO = 0.25
_PANEL_COUNT = 30  # innermost panel ends at t * 4**-30 ~ 1e-18 t
_MAX_DEPTH = 40


def integrate_from_zero(
    fun: Callable[[np.ndarray, np.ndarray], np.ndarray],
    t,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> np.ndarray:
    """Integrate ``fun`` over ``[0, t_i]`` for every entry of ``t``.

    Parameters
    ----------
    fun : callable
        ``fun(s, idx)`` evaluates the integrand at nodes ``s`` belonging to
        the flat output positions ``idx``; the index lets per-point
        parameters (e.g. a shift) be gathered by the caller.
    t : array_like
        Non-negative upper limits.
    rtol : float
        Relative target per panel.
    atol : float
        Absolute floor, scaled by the coarse estimate of each point's
        integral so that tiny integrals keep their relative accuracy.

    Returns
    -------
    numpy.ndarray
        Integrals with the shape of ``t``.
    """
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    if np.any(flat < 0) or not np.all(np.isfinite(flat)):
        raise ValueError("upper limits must be finite and non-negative")
    out = np.zeros(flat.shape)
    pos = np.nonzero(flat > 0)[0]
    if pos.size == 0:
        return out.reshape(t.shape)

    k = np.arange(_PANEL_COUNT)
    hi = (flat[pos, None] * _PANEL_RATIO ** k).ravel()
    lo = (flat[pos, None] * _PANEL_RATIO ** (k + 1)).ravel()
    lo[_PANEL_COUNT - 1 :: _PANEL_COUNT] = 0.0
    idx = np.repeat(pos, _PANEL_COUNT)

    mid = 0.5 * (lo + hi)
    f_lo = fun(lo, idx)
    f_mid = fun(mid, idx)
    f_hi = fun(hi, idx)
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)

    coarse = np.zeros(flat.shape)
    np.add.at(coarse, idx, whole)
    floor = atol * np.abs(coarse)

    for depth in range(_MAX_DEPTH):
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        f_lm = fun(lm, idx)
        f_rm = fun(rm, idx)
        left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_lm + f_mid)
        right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_rm + f_hi)
        refined = left + right
        err = refined - whole
        tol = 15.0 * np.maximum(rtol * np.abs(refined), floor[idx])
        done = (np.abs(err) <= tol) | (depth == _MAX_DEPTH - 1)
        if not np.all(np.isfinite(refined)):
            raise FloatingPointError("non-finite integrand value")
        np.add.at(out, idx[done], refined[done] + err[done] / 15.0)
        keep = ~done
        if not keep.any():
            break
        # children: [lo, mid] and [mid, hi]
        lo, mid, hi = (
            np.concatenate([lo[keep], mid[keep]]),
            np.concatenate([lm[keep], rm[keep]]),
            np.concatenate([mid[keep], hi[keep]]),
        )
        f_lo, f_mid, f_hi = (
            np.concatenate([f_lo[keep], f_mid[keep]]),
            np.concatenate([f_lm[keep], f_rm[keep]]),
            np.concatenate([f_mid[keep], f_hi[keep]]),
        )
        whole = np.concatenate([left[keep], right[keep]])
        idx = np.concatenate([idx[keep], idx[keep]])
    return out.reshape(t.shape)
