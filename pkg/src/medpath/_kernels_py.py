"""Pure-Python selection sweeps, used when the compiled module is unavailable.

Same signatures, random-number consumption and move logic as
``_kernels.pyx``; per-observation sums go through numpy, so results agree
with the compiled path up to floating-point summation order.
"""
import math

import numpy as np
from scipy.special import log_ndtr

IMPLEMENTATION = "python"

LOG_2PI = math.log(2.0 * math.pi)
LOG_SQRT_2PI = 0.5 * LOG_2PI
MIX_INFORMED = 0.9
PROPOSAL_INFLATE = 1.25


def _eval(fam, y, e, nv, out):
    """Log-likelihood, score and Fisher weight at ``e`` written into ``out`` rows."""
    if fam == 0:
        t = np.exp(-np.abs(e))
        pos = e > 0
        out[0] = y * e - (np.maximum(e, 0.0) + np.log1p(t))
        p = np.where(pos, 1.0 / (1.0 + t), t / (1.0 + t))
        out[1] = y - p
        out[2] = p * (1.0 - p)
    elif fam == 1:
        lp = log_ndtr(e)
        lm = log_ndtr(-e)
        lpdf = -0.5 * e * e - LOG_SQRT_2PI
        out[2] = np.exp(2.0 * lpdf - lp - lm)
        hit = y > 0.5
        out[1] = np.where(hit, np.exp(lpdf - lp), -np.exp(lpdf - lm))
        out[0] = np.where(hit, lp, lm)
    else:
        r = y - e
        out[0] = -0.5 * r * r / nv
        out[1] = r / nv
        out[2] = 1.0 / nv


def _norm_logpdf(x, mean, var):
    r = x - mean
    return -0.5 * (LOG_2PI + math.log(var) + r * r / var)


def _pass(fam, y, eta, x, shift, nv, out):
    _eval(fam, y, eta + shift * x, nv, out)
    return float(out[0].sum()), float(out[1] @ x), float(out[2] @ (x * x))


def _cache_sums(cache, x):
    return float(cache[0].sum()), float(cache[1] @ x), float(cache[2] @ (x * x))


def _newton(g1, h1, d1, psi2):
    prec = h1 + 1.0 / psi2
    d = d1 + (g1 - d1 / psi2) / prec
    if not (math.isfinite(d) and math.isfinite(prec) and prec > 0):
        return 0.0, math.sqrt(psi2)
    return d, PROPOSAL_INFLATE / math.sqrt(prec)


def mix_logq(d, m, s, psi2):
    return float(np.logaddexp(
        math.log(MIX_INFORMED) + _norm_logpdf(d, m, s * s),
        math.log(1.0 - MIX_INFORMED) + _norm_logpdf(d, 0.0, psi2),
    ))


def _mix_draw(m, s, psi2, u_mix, z):
    if u_mix < MIX_INFORMED:
        return m + s * z
    return math.sqrt(psi2) * z


def _safe_log(u):
    return math.log(u) if u > 0.0 else -1e300


def _commit(eta, x, shift, cache, scratch):
    eta += shift * x
    cache[...] = scratch


def fill_cache(fam, y, eta, nv, cache):
    _eval(fam, y, eta, nv, cache)


def delta_proposal(fam, y, eta, x, base, psi2, nv, scratch):
    """One Newton step for ``delta_j`` from 0 with the predictor at ``eta + base * x``.

    Returns the proposal mean and the inflated standard deviation.
    """
    _, g0, h0 = _pass(fam, y, eta, x, base, nv, scratch)
    return _newton(g0, h0, 0.0, psi2)


def _birth(fam, y, eta, x, psi2, nv, cache, scratch, u_mix, z):
    ll0, g0, h0 = _cache_sums(cache, x)
    dm, dsd = _newton(g0, h0, 0.0, psi2)
    d = _mix_draw(dm, dsd, psi2, u_mix, z)
    ll1, _, _ = _pass(fam, y, eta, x, d, nv, scratch)
    return ll1 - ll0 + _norm_logpdf(d, 0.0, psi2) - mix_logq(d, dm, dsd, psi2), d


def _death(fam, y, eta, x, d, psi2, nv, cache, scratch):
    ll0, g0, h0 = _pass(fam, y, eta, x, -d, nv, scratch)
    ll1, _, _ = _cache_sums(cache, x)
    dm, dsd = _newton(g0, h0, 0.0, psi2)
    return ll1 - ll0 + _norm_logpdf(d, 0.0, psi2) - mix_logq(d, dm, dsd, psi2)


def gamma_tau_sweep(order, gamma, omega, tau, delta, eta, a_resid, ata, sigma2, slab_var,
                    eta1, eta2, indptr, indices, weights, pi_omega, psi2, Mt, y, fam, nv,
                    cache, scratch, U, Z, counts):
    log_pi = math.log(pi_omega)
    log_1mpi = math.log1p(-pi_omega)
    for t in range(order.shape[0]):
        j = int(order[t])
        v = slab_var[j]
        prec = ata / sigma2 + 1.0 / v
        pv = 1.0 / prec
        pm = (a_resid[j] / sigma2) * pv
        log_bf = 0.5 * math.log(pv / v) + 0.5 * pm * pm / pv
        lo, hi = indptr[j], indptr[j + 1]
        s = float(weights[lo:hi] @ gamma[indices[lo:hi]]) if hi > lo else 0.0
        prior_lo = eta1 + eta2 * s
        if U[t, 0] < 0.5:
            if omega[j] == 1:
                continue
            la = log_bf + prior_lo + log_1mpi
            if gamma[j] == 0:
                counts[0] += 1
                if _safe_log(U[t, 2]) < la:
                    gamma[j] = 1
                    tau[j] = pm + math.sqrt(pv) * Z[t, 0]
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
            x = Mt[j]
            if gamma[j] == 0:
                counts[4] += 1
                lr, d = _birth(fam, y, eta, x, psi2[j], nv, cache, scratch, U[t, 1], Z[t, 1])
                la = log_bf + prior_lo + log_pi + lr
                if _safe_log(U[t, 2]) < la:
                    gamma[j] = 1
                    omega[j] = 1
                    tau[j] = pm + math.sqrt(pv) * Z[t, 0]
                    delta[j] = d
                    _commit(eta, x, d, cache, scratch)
                    counts[5] += 1
            else:
                counts[6] += 1
                d = delta[j]
                la = log_bf + prior_lo + log_pi + _death(fam, y, eta, x, d, psi2[j], nv, cache, scratch)
                if _safe_log(U[t, 2]) < -la:
                    gamma[j] = 0
                    omega[j] = 0
                    tau[j] = 0.0
                    delta[j] = 0.0
                    _commit(eta, x, -d, cache, scratch)
                    counts[7] += 1


def omega_delta_sweep(order, gamma, omega, delta, eta, pi_omega, psi2, Mt, y, fam, nv,
                      cache, scratch, delta_scale, U, Z, counts, rw_accept):
    log_odds = math.log(pi_omega) - math.log1p(-pi_omega)
    for t in range(order.shape[0]):
        j = int(order[t])
        rw_accept[j] = -1
        if gamma[j] == 0:
            continue
        x = Mt[j]
        if omega[j] == 0:
            counts[0] += 1
            lr, d = _birth(fam, y, eta, x, psi2[j], nv, cache, scratch, U[t, 0], Z[t, 0])
            if _safe_log(U[t, 1]) < log_odds + lr:
                omega[j] = 1
                delta[j] = d
                _commit(eta, x, d, cache, scratch)
                counts[1] += 1
        else:
            counts[2] += 1
            d = delta[j]
            la = log_odds + _death(fam, y, eta, x, d, psi2[j], nv, cache, scratch)
            if _safe_log(U[t, 1]) < -la:
                omega[j] = 0
                delta[j] = 0.0
                _commit(eta, x, -d, cache, scratch)
                counts[3] += 1
        if omega[j] == 1:
            d = delta[j]
            dn = d + delta_scale[j] * Z[t, 1]
            ll0, _, _ = _cache_sums(cache, x)
            ll1, _, _ = _pass(fam, y, eta, x, dn - d, nv, scratch)
            la = ll1 - ll0 + _norm_logpdf(dn, 0.0, psi2[j]) - _norm_logpdf(d, 0.0, psi2[j])
            if _safe_log(U[t, 2]) < la:
                delta[j] = dn
                _commit(eta, x, dn - d, cache, scratch)
                rw_accept[j] = 1
            else:
                rw_accept[j] = 0


def coord_rw_sweep(coef, Zt, eta, y, fam, nv, cache, scratch, prior_var, scale, U, Z, accept):
    for k in range(coef.shape[0]):
        c = coef[k]
        cn = c + scale[k] * Z[k]
        ll0, _, _ = _cache_sums(cache, Zt[k])
        ll1, _, _ = _pass(fam, y, eta, Zt[k], cn - c, nv, scratch)
        la = ll1 - ll0 + _norm_logpdf(cn, 0.0, prior_var[k]) - _norm_logpdf(c, 0.0, prior_var[k])
        if _safe_log(U[k]) < la:
            coef[k] = cn
            _commit(eta, Zt[k], cn - c, cache, scratch)
            accept[k] = 1
        else:
            accept[k] = 0
