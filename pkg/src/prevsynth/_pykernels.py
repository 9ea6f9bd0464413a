"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled kernels are tested against. Signatures must match ``_ckernels.pyx``.
"""

import numpy as np
from scipy.special import xlogy


def _window(FA, lo, hi, n_t):
    # P(lo - t <= AAFU <= hi - t) for t = 0..n_t-1
    t = np.arange(n_t)
    U = FA.shape[0] - 1

    def cdf(x):
        return np.where(x < 0, 0.0, FA[np.clip(x, 0, U)])

    return cdf(hi - t) - cdf(lo - 1 - t)


def history_kernel(fD, fT, fA, age_lo, age_hi, want_aafu):
    """Snapshot adjustments of the drug-history distributions per age band.

    Returns ``(Z, kappa, fT_ever, fT_cur, fT_ex, fD_ex, fA_ever, fA_cur, fA_ex)``.
    Undefined entries (zero normaliser) are NaN; AAFU arrays are empty unless
    ``want_aafu``.
    """
    fD = np.asarray(fD, dtype=float)
    fT = np.asarray(fT, dtype=float)
    fA = np.asarray(fA, dtype=float)
    nA = len(age_lo)
    nT = fT.shape[0]
    nU = fA.shape[0]
    FDm = np.concatenate(([0.0], np.cumsum(fD)[: nT - 1]))  # P(D < t)
    FA = np.cumsum(fA)

    Z = np.empty(nA)
    kappa = np.empty(nA)
    fT_ever = np.empty((nA, nT))
    fT_cur = np.empty((nA, nT))
    fT_ex = np.empty((nA, nT))
    fD_ex = np.empty((nA, nT))
    shape_u = (nA, nU) if want_aafu else (0, 0)
    fA_ever = np.empty(shape_u)
    fA_cur = np.empty(shape_u)
    fA_ex = np.empty(shape_u)

    with np.errstate(divide="ignore", invalid="ignore"):
        for a in range(nA):
            w = fT * _window(FA, age_lo[a], age_hi[a], nT)
            z = w.sum()
            Z[a] = z
            k = (w * FDm).sum() / z if z > 0 else np.nan
            kappa[a] = k
            ev = w / z if z > 0 else np.full(nT, np.nan)
            fT_ever[a] = ev
            fT_cur[a] = ev * (1.0 - FDm) / (1.0 - k) if k < 1 else np.nan
            fT_ex[a] = ev * FDm / k if k > 0 else np.nan
            surv = 1.0 - np.cumsum(ev)  # P(TSS > t | band)
            fD_ex[a, :] = np.nan
            if k > 0:
                m = min(fD.shape[0], nT)
                fD_ex[a, :m] = fD[:m] * surv[:m] / k
            if want_aafu:
                num_e = np.zeros(nU)
                num_c = np.zeros(nU)
                num_x = np.zeros(nU)
                for age in range(age_lo[a], age_hi[a] + 1):
                    u = np.arange(max(0, age - nT + 1), min(age, nU - 1) + 1)
                    t = age - u
                    base = fA[u] * fT[t]
                    num_e[u] += base
                    num_c[u] += base * (1.0 - FDm[t])
                    num_x[u] += base * FDm[t]
                fA_ever[a] = num_e / z if z > 0 else np.nan
                fA_cur[a] = num_c / (z * (1.0 - k)) if k < 1 else np.nan
                fA_ex[a] = num_x / (z * k) if k > 0 else np.nan
    return Z, kappa, fT_ever, fT_cur, fT_ex, fD_ex, fA_ever, fA_cur, fA_ex


def prevalence_kernel(pi_year, fD, fT_cur, fT_ex):
    """Prevalence among current and ex-IDUs per age band.

    ``pi_year[a, l, t]`` is ever-IDU prevalence at duration ``l`` and time
    since start ``t``. Current IDUs sit on the diagonal ``l == t``; ex-IDUs
    average ``l < t`` under the duration pmf truncated below ``t``. An ex
    term with positive weight but no duration mass below ``t`` yields NaN.
    """
    pi_year = np.asarray(pi_year, dtype=float)
    fD = np.asarray(fD, dtype=float)
    nA, nT = fT_cur.shape
    FDm = np.concatenate(([0.0], np.cumsum(fD)[: nT - 1]))
    strict = np.tri(nT, nT, -1, dtype=bool).T  # [l, t] true where l < t
    pi_cur = np.einsum("att,at->a", pi_year, fT_cur)
    pi_ex = np.empty(nA)
    for a in range(nA):
        inner = ((pi_year[a] * fD[:, None]) * strict).sum(axis=0)
        w = fT_ex[a]
        live = w > 0
        if np.any(np.isnan(w)) or np.any(FDm[live] <= 0):
            pi_ex[a] = np.nan
            continue
        pi_ex[a] = np.sum(w[live] * inner[live] / FDm[live])
    return pi_cur, pi_ex


def binomial_loglik(y, n, p, logc):
    """Per-observation binomial log-likelihood with the combinatorial term."""
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = xlogy(y, p) + xlogy(n - y, 1.0 - p) + logc
    return out


def binomial_deviance(y, n, p):
    """Per-observation saturated-vs-fitted deviance, 0 log 0 = 0."""
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(y > 0, y * np.log(y / (n * p)), 0.0)
        r = n - y
        b = np.where(r > 0, r * np.log(r / (n - n * p)), 0.0)
    return 2.0 * (a + b)


def cell_prevalence_kernel(cells, dcat, tcat, fD, fT_cur, fT_ex):
    """``prevalence_kernel`` with ``pi_year[a, l, t] = cells[a, dcat[l], tcat[t]]``."""
    cells = np.asarray(cells, dtype=float)
    pi_year = cells[:, np.asarray(dcat)[:, None], np.asarray(tcat)[None, :]]
    return prevalence_kernel(pi_year, fD, fT_cur, fT_ex)
