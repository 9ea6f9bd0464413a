# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_pykernels`` exactly (same signatures,
same NaN conventions)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p, NAN, INFINITY

cnp.import_array()


cdef inline double _cdf(const double[::1] FA, long x) noexcept nogil:
    cdef long U = FA.shape[0] - 1
    if x < 0:
        return 0.0
    if x > U:
        return FA[U]
    return FA[x]


def history_kernel(const double[::1] fD, const double[::1] fT, const double[::1] fA,
                   age_lo, age_hi, bint want_aafu):
    cdef Py_ssize_t nA = len(age_lo)
    cdef Py_ssize_t nT = fT.shape[0]
    cdef Py_ssize_t nU = fA.shape[0]
    cdef Py_ssize_t nD = fD.shape[0]
    cdef Py_ssize_t a, t, u, age, m
    cdef long lo, hi
    cdef double z, k, acc, w, base, s

    FDm_arr = np.empty(nT)
    FA_arr = np.empty(nU)
    cdef double[::1] FDm = FDm_arr
    cdef double[::1] FA = FA_arr
    acc = 0.0
    for t in range(nT):
        FDm[t] = acc
        if t < nD:
            acc += fD[t]
    acc = 0.0
    for u in range(nU):
        acc += fA[u]
        FA[u] = acc

    Z_arr = np.empty(nA)
    kappa_arr = np.empty(nA)
    fT_ever_arr = np.empty((nA, nT))
    fT_cur_arr = np.empty((nA, nT))
    fT_ex_arr = np.empty((nA, nT))
    fD_ex_arr = np.empty((nA, nT))
    if want_aafu:
        fA_ever_arr = np.zeros((nA, nU))
        fA_cur_arr = np.zeros((nA, nU))
        fA_ex_arr = np.zeros((nA, nU))
    else:
        fA_ever_arr = np.empty((0, 0))
        fA_cur_arr = np.empty((0, 0))
        fA_ex_arr = np.empty((0, 0))
    cdef double[::1] Z = Z_arr
    cdef double[::1] kappa = kappa_arr
    cdef double[:, ::1] fT_ever = fT_ever_arr
    cdef double[:, ::1] fT_cur = fT_cur_arr
    cdef double[:, ::1] fT_ex = fT_ex_arr
    cdef double[:, ::1] fD_ex = fD_ex_arr
    cdef double[:, ::1] fA_ever = fA_ever_arr
    cdef double[:, ::1] fA_cur = fA_cur_arr
    cdef double[:, ::1] fA_ex = fA_ex_arr
    cdef double[::1] W = np.empty(nT)

    m = nD if nD < nT else nT
    for a in range(nA):
        lo = age_lo[a]
        hi = age_hi[a]
        z = 0.0
        k = 0.0
        for t in range(nT):
            w = fT[t] * (_cdf(FA, hi - t) - _cdf(FA, lo - 1 - t))
            W[t] = w
            z += w
            k += w * FDm[t]
        Z[a] = z
        if z > 0:
            k = k / z
        else:
            k = NAN
        kappa[a] = k
        acc = 0.0
        for t in range(nT):
            if z > 0:
                fT_ever[a, t] = W[t] / z
            else:
                fT_ever[a, t] = NAN
            fT_cur[a, t] = fT_ever[a, t] * (1.0 - FDm[t]) / (1.0 - k) if k < 1 else NAN
            fT_ex[a, t] = fT_ever[a, t] * FDm[t] / k if k > 0 else NAN
            fD_ex[a, t] = NAN
        if k > 0:
            acc = 0.0
            for t in range(m):
                acc += fT_ever[a, t]
                fD_ex[a, t] = fD[t] * (1.0 - acc) / k
        if want_aafu:
            for age in range(lo, hi + 1):
                u = age - nT + 1
                if u < 0:
                    u = 0
                while u <= age and u < nU:
                    t = age - u
                    base = fA[u] * fT[t]
                    fA_ever[a, u] += base
                    fA_cur[a, u] += base * (1.0 - FDm[t])
                    fA_ex[a, u] += base * FDm[t]
                    u += 1
            for u in range(nU):
                fA_ever[a, u] = fA_ever[a, u] / z if z > 0 else NAN
                fA_cur[a, u] = fA_cur[a, u] / (z * (1.0 - k)) if k < 1 else NAN
                fA_ex[a, u] = fA_ex[a, u] / (z * k) if k > 0 else NAN
    return (Z_arr, kappa_arr, fT_ever_arr, fT_cur_arr, fT_ex_arr, fD_ex_arr,
            fA_ever_arr, fA_cur_arr, fA_ex_arr)


def prevalence_kernel(const double[:, :, ::1] pi_year, const double[::1] fD,
                      const double[:, ::1] fT_cur, const double[:, ::1] fT_ex):
    cdef Py_ssize_t nA = fT_cur.shape[0]
    cdef Py_ssize_t nT = fT_cur.shape[1]
    cdef Py_ssize_t nD = fD.shape[0]
    cdef Py_ssize_t a, t, l
    cdef double acc, inner, FDm, s, w
    cdef bint bad
    pi_cur_arr = np.empty(nA)
    pi_ex_arr = np.empty(nA)
    cdef double[::1] pi_cur = pi_cur_arr
    cdef double[::1] pi_ex = pi_ex_arr
    for a in range(nA):
        s = 0.0
        for t in range(nT):
            s += pi_year[a, t, t] * fT_cur[a, t]
        pi_cur[a] = s
        s = 0.0
        inner = 0.0
        FDm = 0.0
        bad = False
        for t in range(nT):
            # inner accumulates sum_{l<t} pi(l, t) fD(l) lazily per column
            w = fT_ex[a, t]
            if w > 0 or w != w:
                if w != w:
                    bad = True
                    break
                if FDm <= 0:
                    bad = True
                    break
                inner = 0.0
                for l in range(t if t < nD else nD):
                    inner += pi_year[a, l, t] * fD[l]
                s += w * inner / FDm
            if t < nD:
                FDm += fD[t]
        pi_ex[a] = NAN if bad else s
    return pi_cur_arr, pi_ex_arr


def binomial_loglik(const double[::1] y, const double[::1] n, const double[::1] p,
                    const double[::1] logc):
    cdef Py_ssize_t j, N = y.shape[0]
    out_arr = np.empty(N)
    cdef double[::1] out = out_arr
    cdef double v, r
    for j in range(N):
        v = logc[j]
        r = n[j] - y[j]
        if y[j] > 0:
            v += y[j] * log(p[j]) if p[j] > 0 else -INFINITY
        if r > 0:
            v += r * log1p(-p[j]) if p[j] < 1 else -INFINITY
        out[j] = v
    return out_arr


def binomial_deviance(const double[::1] y, const double[::1] n, const double[::1] p):
    cdef Py_ssize_t j, N = y.shape[0]
    out_arr = np.empty(N)
    cdef double[::1] out = out_arr
    cdef double v, r
    for j in range(N):
        v = 0.0
        r = n[j] - y[j]
        if y[j] > 0:
            v += y[j] * log(y[j] / (n[j] * p[j])) if p[j] > 0 else INFINITY
        if r > 0:
            v += r * log(r / (n[j] - n[j] * p[j])) if p[j] < 1 else INFINITY
        out[j] = 2.0 * v
    return out_arr


def cell_prevalence_kernel(const double[:, :, ::1] cells, const Py_ssize_t[::1] dcat,
                           const Py_ssize_t[::1] tcat, const double[::1] fD,
                           const double[:, ::1] fT_cur, const double[:, ::1] fT_ex):
    cdef Py_ssize_t nA = fT_cur.shape[0]
    cdef Py_ssize_t nT = fT_cur.shape[1]
    cdef Py_ssize_t nD = fD.shape[0]
    cdef Py_ssize_t a, t, l, tc
    cdef double inner, FDm, s, w
    cdef bint bad
    pi_cur_arr = np.empty(nA)
    pi_ex_arr = np.empty(nA)
    cdef double[::1] pi_cur = pi_cur_arr
    cdef double[::1] pi_ex = pi_ex_arr
    for a in range(nA):
        s = 0.0
        for t in range(nT):
            s += cells[a, dcat[t], tcat[t]] * fT_cur[a, t]
        pi_cur[a] = s
        s = 0.0
        FDm = 0.0
        bad = False
        for t in range(nT):
            w = fT_ex[a, t]
            if w > 0 or w != w:
                if w != w or FDm <= 0:
                    bad = True
                    break
                tc = tcat[t]
                inner = 0.0
                for l in range(t if t < nD else nD):
                    inner += cells[a, dcat[l], tc] * fD[l]
                s += w * inner / FDm
            if t < nD:
                FDm += fD[t]
        pi_ex[a] = NAN if bad else s
    return pi_cur_arr, pi_ex_arr
