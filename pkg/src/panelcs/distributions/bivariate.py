"""Exact bivariate normal and bivariate t lower-orthant probabilities.

Both functions are vectorized over their arguments.  The normal case uses
Owen's T function; the t case uses the Dunnett-Sobel series for integer
degrees of freedom in the form given by Genz (2004), which is exact up to
rounding.
"""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["bvn_cdf", "bvt_cdf", "MAX_EXACT_DOF"]

# Dunnett-Sobel needs about dof/2 vectorized passes; beyond this the QMC route is cheaper.
MAX_EXACT_DOF = 2000


def _owen_term(h, other, rho, root):
    # T(h, (other - rho*h) / (h*sqrt(1-rho^2))) with the h -> 0 limit handled
    num = other - rho * h
    with np.errstate(divide="ignore", invalid="ignore"):
        a = num / (h * root)
        val = special.owens_t(h, np.where(h == 0, 0.0, a))
    limit = np.where(num > 0, 0.25, np.where(num < 0, -0.25, 0.0))
    return np.where(h == 0, limit, val)


def bvn_cdf(h, k, rho):
    """``P(X1 <= h, X2 <= k)`` for a standard bivariate normal with correlation ``rho``."""
    h, k, rho = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (h, k, rho)))
    root = np.sqrt(np.clip(1.0 - rho * rho, 0.0, None))
    ph, pk = special.ndtr(h), special.ndtr(k)
    hk = h * k
    delta = np.where((hk < 0) | ((hk == 0) & (h + k < 0)), 0.5, 0.0)
    with np.errstate(invalid="ignore"):
        out = 0.5 * (ph + pk) - _owen_term(h, k, rho, root) - _owen_term(k, h, rho, root) - delta
    # both limits zero: the Owen terms cancel to the arcsine formula
    both0 = (h == 0) & (k == 0)
    out = np.where(both0, 0.25 + np.arcsin(np.clip(rho, -1, 1)) / (2 * np.pi), out)
    # degenerate correlations
    out = np.where(rho >= 1.0, special.ndtr(np.minimum(h, k)), out)
    out = np.where(rho <= -1.0, np.clip(ph + pk - 1.0, 0.0, None), out)
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    out = np.where(np.isposinf(h), pk, out)
    out = np.where(np.isposinf(k), ph, out)
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def bvt_cdf(h, k, rho, dof: int):
    """``P(X1 <= h, X2 <= k)`` for a bivariate t with correlation ``rho``.

    ``dof`` must be a positive integer no larger than :data:`MAX_EXACT_DOF`.
    """
    nu = int(dof)
    if nu != dof or nu < 1:
        raise ValueError("bvt_cdf needs a positive integer number of degrees of freedom")
    if nu > MAX_EXACT_DOF:
        raise ValueError(f"bvt_cdf supports dof <= {MAX_EXACT_DOF}")
    h, k, rho = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (h, k, rho)))
    h, k, r = h.copy(), k.copy(), rho.copy()
    hinf_lo, kinf_lo = np.isneginf(h), np.isneginf(k)
    hinf_hi, kinf_hi = np.isposinf(h), np.isposinf(k)
    # keep the series finite; infinite limits are patched at the end
    h = np.where(np.isinf(h), 0.0, h)
    k = np.where(np.isinf(k), 0.0, k)
    r = np.clip(r, -1.0, 1.0)

    ors = 1.0 - r * r
    hrk = h - r * k
    krh = k - r * h
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = (np.abs(hrk) + ors) > 0
        xnhk = np.where(pos, hrk**2 / (hrk**2 + ors * (nu + k * k)), 0.0)
        xnkh = np.where(pos, krh**2 / (krh**2 + ors * (nu + h * h)), 0.0)
    hs = np.sign(hrk)
    ks = np.sign(krh)
    tpi = 2.0 * np.pi
    if nu % 2 == 0:
        bvt = np.arctan2(np.sqrt(ors), -r) / tpi
        gmph = h / np.sqrt(16.0 * (nu + h * h))
        gmpk = k / np.sqrt(16.0 * (nu + k * k))
        btnckh = 2.0 * np.arctan2(np.sqrt(xnkh), np.sqrt(1.0 - xnkh)) / np.pi
        btpdkh = 2.0 * np.sqrt(xnkh * (1.0 - xnkh)) / np.pi
        btnchk = 2.0 * np.arctan2(np.sqrt(xnhk), np.sqrt(1.0 - xnhk)) / np.pi
        btpdhk = 2.0 * np.sqrt(xnhk * (1.0 - xnhk)) / np.pi
        for j in range(1, nu // 2 + 1):
            bvt = bvt + gmph * (1.0 + ks * btnckh) + gmpk * (1.0 + hs * btnchk)
            btnckh = btnckh + btpdkh
            btpdkh = 2 * j * btpdkh * (1.0 - xnkh) / (2 * j + 1)
            btnchk = btnchk + btpdhk
            btpdhk = 2 * j * btpdhk * (1.0 - xnhk) / (2 * j + 1)
            gmph = gmph * (2 * j - 1) / (2 * j * (1.0 + h * h / nu))
            gmpk = gmpk * (2 * j - 1) / (2 * j * (1.0 + k * k / nu))
    else:
        qhrk = np.sqrt(np.clip(h * h + k * k - 2.0 * r * h * k + nu * ors, 0.0, None))
        hkrn = h * k + r * nu
        hkn = h * k - nu
        hpk = h + k
        bvt = np.arctan2(-np.sqrt(nu) * (hkn * qhrk + hpk * hkrn), hkn * hkrn - nu * hpk * qhrk) / tpi
        bvt = np.where(bvt < -1e-15, bvt + 1.0, bvt)
        gmph = h / (tpi * np.sqrt(nu) * (1.0 + h * h / nu))
        gmpk = k / (tpi * np.sqrt(nu) * (1.0 + k * k / nu))
        btnckh = np.sqrt(xnkh)
        btpdkh = btnckh.copy()
        btnchk = np.sqrt(xnhk)
        btpdhk = btnchk.copy()
        for j in range(1, (nu - 1) // 2 + 1):
            bvt = bvt + gmph * (1.0 + ks * btnckh) + gmpk * (1.0 + hs * btnchk)
            btpdkh = (2 * j - 1) * btpdkh * (1.0 - xnkh) / (2 * j)
            btnckh = btnckh + btpdkh
            btpdhk = (2 * j - 1) * btpdhk * (1.0 - xnhk) / (2 * j)
            btnchk = btnchk + btpdhk
            gmph = gmph * 2 * j / ((2 * j + 1) * (1.0 + h * h / nu))
            gmpk = gmpk * 2 * j / ((2 * j + 1) * (1.0 + k * k / nu))

    th = special.stdtr(nu, np.where(hinf_hi | hinf_lo, 0.0, h))
    tk = special.stdtr(nu, np.where(kinf_hi | kinf_lo, 0.0, k))
    out = np.where(r >= 1.0, special.stdtr(nu, np.minimum(h, k)), bvt)
    out = np.where(r <= -1.0, np.clip(th + tk - 1.0, 0.0, None), out)
    out = np.where(hinf_hi, tk, out)
    out = np.where(kinf_hi, th, out)
    out = np.where(hinf_hi & kinf_hi, 1.0, out)
    out = np.where(hinf_lo | kinf_lo, 0.0, out)
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out
