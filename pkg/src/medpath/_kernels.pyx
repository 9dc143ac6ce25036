# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selection sweeps.  Mirrors ``_kernels_py`` line for line.

The sweeps keep ``cache`` (3 x n: log-likelihood, score, Fisher weight per
observation) in step with ``eta``.  Candidate evaluations go to ``scratch``
and are copied into ``cache`` when a move that changes ``eta`` is accepted.
"""
cimport numpy as cnp
from libc.math cimport exp, log, log1p, sqrt, isfinite
from scipy.special.cython_special cimport log_ndtr

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453
cdef double LOG_SQRT_2PI = 0.9189385332046727
cdef double MIX_INFORMED = 0.9
cdef double PROPOSAL_INFLATE = 1.25

IMPLEMENTATION = "cython"


cdef inline double _eval(int fam, double y, double e, double nv, double* g, double* w) nogil:
    # log-likelihood at e; score and Fisher weight through g, w
    cdef double t, p, l1p, lp, lm, lpdf, r
    if fam == 0:
        if e > 0:
            t = exp(-e)
            l1p = e + log1p(t)
            p = 1.0 / (1.0 + t)
        else:
            t = exp(e)
            l1p = log1p(t)
            p = t / (1.0 + t)
        g[0] = y - p
        w[0] = p * (1.0 - p)
        return y * e - l1p
    elif fam == 1:
        lp = log_ndtr(e)
        lm = log_ndtr(-e)
        lpdf = -0.5 * e * e - LOG_SQRT_2PI
        w[0] = exp(2.0 * lpdf - lp - lm)
        if y > 0.5:
            g[0] = exp(lpdf - lp)
            return lp
        g[0] = -exp(lpdf - lm)
        return lm
    r = y - e
    g[0] = r / nv
    w[0] = 1.0 / nv
    return -0.5 * r * r / nv


cdef inline double _norm_logpdf(double x, double mean, double var) nogil:
    cdef double r = x - mean
    return -0.5 * (LOG_2PI + log(var) + r * r / var)


cdef double _pass(int fam, const double[::1] y, const double[::1] eta, const double[::1] x,
                  double shift, double nv, double[:, ::1] out, double* gx, double* hx) nogil:
    # evaluate at eta + shift * x into out; returns sum of log-likelihoods
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double tot = 0.0, sg = 0.0, sh = 0.0, g, w, l
    for i in range(n):
        l = _eval(fam, y[i], eta[i] + shift * x[i], nv, &g, &w)
        out[0, i] = l
        out[1, i] = g
        out[2, i] = w
        tot += l
        sg += g * x[i]
        sh += w * x[i] * x[i]
    gx[0] = sg
    hx[0] = sh
    return tot


cdef double _cache_sums(const double[:, ::1] cache, const double[::1] x, double* gx, double* hx) nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double tot = 0.0, sg = 0.0, sh = 0.0
    for i in range(n):
        tot += cache[0, i]
        sg += cache[1, i] * x[i]
        sh += cache[2, i] * x[i] * x[i]
    gx[0] = sg
    hx[0] = sh
    return tot


cdef inline void _newton(double g1, double h1, double d1, double psi2, double* mean, double* sd) nogil:
    # Newton step on the log posterior of delta_j from d1, with score and
    # curvature sums evaluated there
    cdef double prec = h1 + 1.0 / psi2
    cdef double d = d1 + (g1 - d1 / psi2) / prec
    if not (isfinite(d) and isfinite(prec) and prec > 0):
        mean[0] = 0.0
        sd[0] = sqrt(psi2)
        return
    mean[0] = d
    sd[0] = PROPOSAL_INFLATE / sqrt(prec)


cdef inline double _mix_logq(double d, double m, double s, double psi2) nogil:
    cdef double a = log(MIX_INFORMED) + _norm_logpdf(d, m, s * s)
    cdef double b = log(1.0 - MIX_INFORMED) + _norm_logpdf(d, 0.0, psi2)
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef inline double _mix_draw(double m, double s, double psi2, double u_mix, double z) nogil:
    if u_mix < MIX_INFORMED:
        return m + s * z
    return sqrt(psi2) * z


cdef inline double _safe_log(double u) nogil:
    if u <= 0.0:
        return -1e300
    return log(u)


cdef void _commit(double[::1] eta, const double[::1] x, double shift,
                  double[:, ::1] cache, const double[:, ::1] scratch) nogil:
    cdef Py_ssize_t i, n = eta.shape[0]
    for i in range(n):
        eta[i] += shift * x[i]
        cache[0, i] = scratch[0, i]
        cache[1, i] = scratch[1, i]
        cache[2, i] = scratch[2, i]


def fill_cache(int fam, const double[::1] y, const double[::1] eta, double nv, double[:, ::1] cache):
    cdef Py_ssize_t i, n = y.shape[0]
    cdef double g, w
    for i in range(n):
        cache[0, i] = _eval(fam, y[i], eta[i], nv, &g, &w)
        cache[1, i] = g
        cache[2, i] = w


def delta_proposal(int fam, const double[::1] y, const double[::1] eta, const double[::1] x,
                   double base, double psi2, double nv, double[:, ::1] scratch):
    """One Newton step for ``delta_j`` from 0 with the predictor at ``eta + base * x``.

    Returns the proposal mean and the inflated standard deviation.
    """
    cdef double g0, h0, m, s
    _pass(fam, y, eta, x, base, nv, scratch, &g0, &h0)
    _newton(g0, h0, 0.0, psi2, &m, &s)
    return m, s


def mix_logq(double d, double m, double s, double psi2):
    return _mix_logq(d, m, s, psi2)


cdef double _birth(int fam, const double[::1] y, double[::1] eta, const double[::1] x,
                   double psi2, double nv, const double[:, ::1] cache, double[:, ::1] scratch,
                   double u_mix, double z, double* d_out) nogil:
    # propose delta_j for a currently absent term; returns log(lik ratio * prior / proposal)
    cdef double g0, h0, g1, h1, dm, dsd, d, ll0, ll1
    ll0 = _cache_sums(cache, x, &g0, &h0)
    _newton(g0, h0, 0.0, psi2, &dm, &dsd)
    d = _mix_draw(dm, dsd, psi2, u_mix, z)
    ll1 = _pass(fam, y, eta, x, d, nv, scratch, &g1, &h1)
    d_out[0] = d
    return ll1 - ll0 + _norm_logpdf(d, 0.0, psi2) - _mix_logq(d, dm, dsd, psi2)


cdef double _death(int fam, const double[::1] y, double[::1] eta, const double[::1] x,
                   double d, double psi2, double nv, const double[:, ::1] cache,
                   double[:, ::1] scratch) nogil:
    # same log ratio as the matching birth; scratch ends holding the reduced predictor's cache
    cdef double g0, h0, dm, dsd, ll0, ll1, tmp
    ll0 = _pass(fam, y, eta, x, -d, nv, scratch, &g0, &h0)
    ll1 = _cache_sums(cache, x, &tmp, &tmp)
    _newton(g0, h0, 0.0, psi2, &dm, &dsd)
    return ll1 - ll0 + _norm_logpdf(d, 0.0, psi2) - _mix_logq(d, dm, dsd, psi2)


def gamma_tau_sweep(const cnp.int64_t[::1] order,
                    signed char[::1] gamma, signed char[::1] omega,
                    double[::1] tau, double[::1] delta, double[::1] eta,
                    const double[::1] a_resid, double ata, double sigma2,
                    const double[::1] slab_var,
                    double eta1, double eta2,
                    const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                    const double[::1] weights,
                    double pi_omega, const double[::1] psi2,
                    const double[:, ::1] Mt, const double[::1] y, int fam, double nv,
                    double[:, ::1] cache, double[:, ::1] scratch,
                    const double[:, ::1] U, const double[:, ::1] Z,
                    cnp.int64_t[::1] counts):
    cdef Py_ssize_t t, j, k
    cdef double v, prec, pv, pm, log_bf, s, prior_lo, la, d
    cdef double log_pi = log(pi_omega), log_1mpi = log1p(-pi_omega)
    with nogil:
        for t in range(order.shape[0]):
            j = order[t]
            v = slab_var[j]
            prec = ata / sigma2 + 1.0 / v
            pv = 1.0 / prec
            pm = (a_resid[j] / sigma2) * pv
            log_bf = 0.5 * log(pv / v) + 0.5 * pm * pm / pv
            s = 0.0
            for k in range(indptr[j], indptr[j + 1]):
                s += weights[k] * gamma[indices[k]]
            prior_lo = eta1 + eta2 * s
            if U[t, 0] < 0.5:
                if omega[j] == 1:
                    continue
                la = log_bf + prior_lo + log_1mpi
                if gamma[j] == 0:
                    counts[0] += 1
                    if _safe_log(U[t, 2]) < la:
                        gamma[j] = 1
                        tau[j] = pm + sqrt(pv) * Z[t, 0]
                        counts[1] += 1
                else:
                    counts[2] += 1
                    if _safe_log(U[t, 2]) < -la:
                        gamma[j] = 0
                        tau[j] = 0.0
                        counts[3] += 1
            else:
                if gamma[j] == 1 and omega[j] == 0:
                    continue
                if gamma[j] == 0:
                    counts[4] += 1
                    la = log_bf + prior_lo + log_pi + _birth(
                        fam, y, eta, Mt[j], psi2[j], nv, cache, scratch, U[t, 1], Z[t, 1], &d)
                    if _safe_log(U[t, 2]) < la:
                        gamma[j] = 1
                        omega[j] = 1
                        tau[j] = pm + sqrt(pv) * Z[t, 0]
                        delta[j] = d
                        _commit(eta, Mt[j], d, cache, scratch)
                        counts[5] += 1
                else:
                    counts[6] += 1
                    d = delta[j]
                    la = log_bf + prior_lo + log_pi + _death(
                        fam, y, eta, Mt[j], d, psi2[j], nv, cache, scratch)
                    if _safe_log(U[t, 2]) < -la:
                        gamma[j] = 0
                        omega[j] = 0
                        tau[j] = 0.0
                        delta[j] = 0.0
                        _commit(eta, Mt[j], -d, cache, scratch)
                        counts[7] += 1


def omega_delta_sweep(const cnp.int64_t[::1] order,
                      const signed char[::1] gamma, signed char[::1] omega,
                      double[::1] delta, double[::1] eta,
                      double pi_omega, const double[::1] psi2,
                      const double[:, ::1] Mt, const double[::1] y, int fam, double nv,
                      double[:, ::1] cache, double[:, ::1] scratch,
                      const double[::1] delta_scale,
                      const double[:, ::1] U, const double[:, ::1] Z,
                      cnp.int64_t[::1] counts, signed char[::1] rw_accept):
    cdef Py_ssize_t t, j
    cdef double d, dn, la, ll0, ll1, tmp
    cdef double log_odds = log(pi_omega) - log1p(-pi_omega)
    with nogil:
        for t in range(order.shape[0]):
            j = order[t]
            rw_accept[j] = -1
            if gamma[j] == 0:
                continue
            if omega[j] == 0:
                counts[0] += 1
                la = log_odds + _birth(fam, y, eta, Mt[j], psi2[j], nv, cache, scratch,
                                       U[t, 0], Z[t, 0], &d)
                if _safe_log(U[t, 1]) < la:
                    omega[j] = 1
                    delta[j] = d
                    _commit(eta, Mt[j], d, cache, scratch)
                    counts[1] += 1
            else:
                counts[2] += 1
                d = delta[j]
                la = log_odds + _death(fam, y, eta, Mt[j], d, psi2[j], nv, cache, scratch)
                if _safe_log(U[t, 1]) < -la:
                    omega[j] = 0
                    delta[j] = 0.0
                    _commit(eta, Mt[j], -d, cache, scratch)
                    counts[3] += 1
            if omega[j] == 1:
                d = delta[j]
                dn = d + delta_scale[j] * Z[t, 1]
                ll0 = _cache_sums(cache, Mt[j], &tmp, &tmp)
                ll1 = _pass(fam, y, eta, Mt[j], dn - d, nv, scratch, &tmp, &tmp)
                la = ll1 - ll0 + _norm_logpdf(dn, 0.0, psi2[j]) - _norm_logpdf(d, 0.0, psi2[j])
                if _safe_log(U[t, 2]) < la:
                    delta[j] = dn
                    _commit(eta, Mt[j], dn - d, cache, scratch)
                    rw_accept[j] = 1
                else:
                    rw_accept[j] = 0


def coord_rw_sweep(double[::1] coef, const double[:, ::1] Zt, double[::1] eta,
                   const double[::1] y, int fam, double nv,
                   double[:, ::1] cache, double[:, ::1] scratch,
                   const double[::1] prior_var, const double[::1] scale,
                   const double[::1] U, const double[::1] Z, signed char[::1] accept):
    cdef Py_ssize_t k
    cdef double c, cn, la, ll0, ll1, tmp
    with nogil:
        for k in range(coef.shape[0]):
            c = coef[k]
            cn = c + scale[k] * Z[k]
            ll0 = _cache_sums(cache, Zt[k], &tmp, &tmp)
            ll1 = _pass(fam, y, eta, Zt[k], cn - c, nv, scratch, &tmp, &tmp)
            la = ll1 - ll0 + _norm_logpdf(cn, 0.0, prior_var[k]) - _norm_logpdf(c, 0.0, prior_var[k])
            if _safe_log(U[k]) < la:
                coef[k] = cn
                _commit(eta, Zt[k], cn - c, cache, scratch)
                accept[k] = 1
            else:
                accept[k] = 0
