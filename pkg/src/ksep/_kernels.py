"""Compiled inner loops for the sliding-state Gaussian smoother.

The recursion here is the information-domain mirror of the covariance-domain
reference ops in equalizers.py (which go through numerics.hermitian_solve).
Keeping precision matrices lets each step run in O(L^2): dropping the oldest
state coordinate is a rank-1 Schur downdate and the observation is a rank-1
information update. The per-symbol merge then pays one small Cholesky to
deliver moments. Both routes are cross-checked in the test suite.

Dtype-generic: compiled separately for float64 (real field) and complex128
(proper-complex field). Precisions and variances are always float64.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# status codes shared with the wrapper
OK = 0
SINGULAR = 1

# eigenvalue floor for an indefinite merged precision, relative to its trace
EIG_FLOOR_SCALE = 1e-10
_TINY = 1e-300


@njit(cache=True, error_model="numpy", inline="always")
def _chol_lower(a, r):
    """In-place lower Cholesky a = r r^H. Returns False when not positive definite."""
    L = a.shape[0]
    for j in range(L):
        s = a[j, j].real
        for t in range(j):
            s -= (r[j, t] * np.conj(r[j, t])).real
        if not np.isfinite(s) or s <= 0.0:
            return False
        d = np.sqrt(s)
        r[j, j] = d
        for i in range(j + 1, L):
            acc = a[i, j]
            for t in range(j):
                acc -= r[i, t] * np.conj(r[j, t])
            r[i, j] = acc / d
    return True


@njit(cache=True, error_model="numpy")
def _info_filter_2tap(y, gc, G, fprec, fwmean, boundary_prec, J_out, eta_out):
    """Two-tap specialization of _info_filter with the step fully unrolled.

    Same expressions in the same order, so it produces identical doubles;
    only the loop scaffolding is gone. The minimal ISI case is common enough
    to deserve it.
    """
    K = y.shape[0]
    gc0 = gc[0]
    gc1 = gc[1]
    G00 = G[0, 0]
    G01 = G[0, 1]
    G10 = G[1, 0]
    G11 = G[1, 1]
    yk = y[0]
    J_out[0, 0, 0] = boundary_prec + G00
    J_out[0, 0, 1] = G01
    J_out[0, 1, 0] = G10
    J_out[0, 1, 1] = fprec[1] + G11
    eta_out[0, 0] = 0.0 + gc0 * yk
    eta_out[0, 1] = fwmean[1] + gc1 * yk
    for k in range(2, K + 1):
        r = k - 1
        a = J_out[r - 1, 0, 0].real
        if not (a > _TINY):
            return SINGULAR
        inv_a = 1.0 / a
        bp = J_out[r - 1, 1, 0] * inv_a
        jt = J_out[r - 1, 1, 1] - bp * J_out[r - 1, 0, 1]
        et0 = eta_out[r - 1, 1] - bp * eta_out[r - 1, 0]
        yk = y[r]
        J_out[r, 0, 0] = jt + G00
        J_out[r, 0, 1] = G01
        J_out[r, 1, 0] = G10
        J_out[r, 1, 1] = fprec[k] + G11
        eta_out[r, 0] = et0 + gc0 * yk
        eta_out[r, 1] = fwmean[k] + gc1 * yk
    return OK


@njit(cache=True, error_model="numpy")
def _info_filter(y, gc, G, fprec, fwmean, boundary_prec, J_out, eta_out, Jt, et):
    """One information-form filtering sweep over all K = N+m observations.

    Factor arrays cover symbol indices 1-m .. N+m (offset m-1 applied by the
    caller when slicing); position k+m-1 holds the factor of symbol k. The
    initial state is pinned entirely by boundary pseudo-factors. gc and G are
    the noise-scaled conjugate taps and their outer product with the taps,
    constant across steps. Fills J_out[k-1], eta_out[k-1] with the belief on
    s_k after absorbing y_k; each step downdates the previous output row in
    place of a separate working copy.
    """
    K = y.shape[0]
    L = gc.shape[0]
    if L == 2:
        return _info_filter_2tap(y, gc, G, fprec, fwmean, boundary_prec, J_out, eta_out)
    for k in range(1, K + 1):
        r = k - 1
        if k == 1:
            # boundary-pinned initial state: dropping the oldest coordinate of
            # a diagonal precision leaves the same diagonal on the survivors
            for p in range(L - 1):
                for q in range(L - 1):
                    Jt[p, q] = 0.0
                Jt[p, p] = boundary_prec
                et[p] = 0.0
        else:
            # drop the oldest coordinate: Schur downdate on the leading pivot
            a = J_out[r - 1, 0, 0].real
            if not (a > _TINY):
                return SINGULAR
            inv_a = 1.0 / a
            for p in range(L - 1):
                bp = J_out[r - 1, p + 1, 0] * inv_a
                for q in range(L - 1):
                    Jt[p, q] = J_out[r - 1, p + 1, q + 1] - bp * J_out[r - 1, 0, q + 1]
                et[p] = eta_out[r - 1, p + 1] - bp * eta_out[r - 1, 0]
        # shift in the new symbol with its prior factor, absorb the rank-1
        # observation, and land the result directly in the output row
        fp = fprec[k + L - 2]  # position k + m - 1
        fw = fwmean[k + L - 2]
        yk = y[r]
        for p in range(L - 1):
            for q in range(L - 1):
                J_out[r, p, q] = Jt[p, q] + G[p, q]
            J_out[r, p, L - 1] = G[p, L - 1]
            J_out[r, L - 1, p] = G[L - 1, p]
            eta_out[r, p] = et[p] + gc[p] * yk
        J_out[r, L - 1, L - 1] = fp + G[L - 1, L - 1]
        eta_out[r, L - 1] = fw + gc[L - 1] * yk
    return OK


@njit(cache=True, error_model="numpy")
def _merge_2tap(
    y, gc, G, fprec, fwmean, JF, etaF, JBr, etaBr,
    marg_mean, marg_var, state_means, state_covs,
):
    """Two-tap merge with the per-symbol 2x2 algebra fully unrolled.

    Follows the generic path step for step: hermitize, Cholesky with the
    eigenvalue-floor retry on an indefinite merge, triangular solves, and the
    covariance from the inverted factor. The retry branch falls back to small
    dense arrays; it only runs on refined factors gone indefinite.
    """
    K = y.shape[0]
    N = K - 1
    gc0 = gc[0]
    gc1 = gc[1]
    G00 = G[0, 0]
    G01 = G[0, 1]
    G10 = G[1, 0]
    G11 = G[1, 1]
    Jc = np.empty((2, 2), dtype=JF.dtype)
    Rc = np.empty((2, 2), dtype=JF.dtype)
    for k in range(1, N + 1):
        rb = K - k
        yk = y[k - 1]
        J00 = (JF[k - 1, 0, 0] + JBr[rb, 1, 1] - G00).real - fprec[k - 1]
        J11 = (JF[k - 1, 1, 1] + JBr[rb, 0, 0] - G11).real - fprec[k]
        J01 = JF[k - 1, 0, 1] + JBr[rb, 1, 0] - G01
        J10 = JF[k - 1, 1, 0] + JBr[rb, 0, 1] - G10
        h = 0.5 * (J01 + np.conj(J10))
        eta0 = etaF[k - 1, 0] + etaBr[rb, 1] - gc0 * yk - fwmean[k - 1]
        eta1 = etaF[k - 1, 1] + etaBr[rb, 0] - gc1 * yk - fwmean[k]
        # lower Cholesky of [[J00, h], [conj(h), J11]]
        ok = np.isfinite(J00) and J00 > 0.0
        r00 = np.sqrt(J00) if ok else 1.0
        r10 = np.conj(h) / r00
        s1 = J11 - (r10 * np.conj(r10)).real
        if ok and np.isfinite(s1) and s1 > 0.0:
            r11 = np.sqrt(s1)
        else:
            # indefinite merge (refined factors): floor eigenvalues, retry
            tr = J00 + J11
            Jc[0, 0] = J00
            Jc[0, 1] = h
            Jc[1, 0] = np.conj(h)
            Jc[1, 1] = J11
            w, V = np.linalg.eigh(Jc)
            floor = EIG_FLOOR_SCALE * tr
            for p in range(2):
                if w[p] < floor:
                    w[p] = floor
            for p in range(2):
                for q in range(2):
                    acc = Jc[0, 0] - Jc[0, 0]
                    for t in range(2):
                        acc += V[p, t] * w[t] * np.conj(V[q, t])
                    Jc[p, q] = acc
            if not _chol_lower(Jc, Rc):
                return SINGULAR
            r00 = Rc[0, 0].real
            r10 = Rc[1, 0]
            r11 = Rc[1, 1].real
        # mu = J^{-1} eta via the triangular factors
        z0 = eta0 / r00
        z1 = (eta1 - r10 * z0) / r11
        mu1 = z1 / r11
        mu0 = (z0 - np.conj(r10) * mu1) / r00
        # W = R^{-1} (lower), Sigma = W^H W
        w00 = 1.0 / r00
        w11 = 1.0 / r11
        w10 = -(r10 * w00) / r11
        s00 = w00 * w00 + (w10 * np.conj(w10)).real
        s01 = np.conj(w10) * w11
        s11 = w11 * w11
        state_covs[k - 1, 0, 0] = s00
        state_covs[k - 1, 0, 1] = s01
        state_covs[k - 1, 1, 0] = np.conj(s01)
        state_covs[k - 1, 1, 1] = s11
        state_means[k - 1, 0] = mu0
        state_means[k - 1, 1] = mu1
        marg_mean[k - 1] = mu1
        marg_var[k - 1] = s11
    return OK


@njit(cache=True, error_model="numpy")
def _merge_and_marginalize(
    y,
    gc,
    G,
    fprec,
    fwmean,
    JF,
    etaF,
    JBr,
    etaBr,
    marg_mean,
    marg_var,
    state_means,
    state_covs,
):
    """Two-filter merge per symbol: subtract double-counted evidence, invert.

    JBr/etaBr hold the reversed-problem filter output; the belief on s_k sits
    at reversed row K-k with coordinates flipped. Outputs cover k = 1..N.
    """
    K = y.shape[0]
    L = gc.shape[0]
    N = K - (L - 1)
    if L == 2:
        return _merge_2tap(
            y, gc, G, fprec, fwmean, JF, etaF, JBr, etaBr,
            marg_mean, marg_var, state_means, state_covs,
        )
    J = np.empty((L, L), dtype=JF.dtype)
    eta = np.empty(L, dtype=etaF.dtype)
    R = np.empty((L, L), dtype=JF.dtype)
    W = np.empty((L, L), dtype=JF.dtype)
    z = np.empty(L, dtype=etaF.dtype)
    mu = np.empty(L, dtype=etaF.dtype)
    for k in range(1, N + 1):
        rb = K - k
        yk = y[k - 1]
        for p in range(L):
            for q in range(L):
                J[p, q] = JF[k - 1, p, q] + JBr[rb, L - 1 - p, L - 1 - q] - G[p, q]
            J[p, p] -= fprec[k + p - 1]
            eta[p] = etaF[k - 1, p] + etaBr[rb, L - 1 - p] - gc[p] * yk - fwmean[k + p - 1]
        # hermitize before factoring; the two passes drift apart by rounding only
        for p in range(L):
            J[p, p] = J[p, p].real
            for q in range(p + 1, L):
                h = 0.5 * (J[p, q] + np.conj(J[q, p]))
                J[p, q] = h
                J[q, p] = np.conj(h)
        ok = _chol_lower(J, R)
        if not ok:
            # indefinite merge (EP-refined factors): floor eigenvalues, retry
            tr = 0.0
            for p in range(L):
                tr += J[p, p].real
            w, V = np.linalg.eigh(J)
            floor = EIG_FLOOR_SCALE * tr
            for p in range(L):
                if w[p] < floor:
                    w[p] = floor
            for p in range(L):
                for q in range(L):
                    acc = J[0, 0] - J[0, 0]  # typed zero
                    for t in range(L):
                        acc += V[p, t] * w[t] * np.conj(V[q, t])
                    J[p, q] = acc
            ok = _chol_lower(J, R)
            if not ok:
                return SINGULAR
        # mu = J^{-1} eta via the triangular factors
        for i in range(L):
            acc = eta[i]
            for t in range(i):
                acc -= R[i, t] * z[t]
            z[i] = acc / R[i, i].real
        for i in range(L - 1, -1, -1):
            acc = z[i]
            for t in range(i + 1, L):
                acc -= np.conj(R[t, i]) * mu[t]
            mu[i] = acc / R[i, i].real
        # W = R^{-1} (lower), Sigma = W^H W
        for j in range(L):
            W[j, j] = 1.0 / R[j, j].real
            for i in range(j + 1, L):
                acc = R[i, j] * W[j, j]
                for t in range(j + 1, i):
                    acc += R[i, t] * W[t, j]
                W[i, j] = -acc / R[i, i].real
        for p in range(L):
            for q in range(p, L):
                acc = J[0, 0] - J[0, 0]
                for t in range(q, L):
                    acc += np.conj(W[t, p]) * W[t, q]
                state_covs[k - 1, p, q] = acc
                state_covs[k - 1, q, p] = np.conj(acc)
            state_covs[k - 1, p, p] = state_covs[k - 1, p, p].real
            state_means[k - 1, p] = mu[p]
        marg_mean[k - 1] = mu[L - 1]
        marg_var[k - 1] = state_covs[k - 1, L - 1, L - 1].real
    return OK


@njit(cache=True, error_model="numpy")
def smoother_kernel(
    y,
    g,
    noise_var,
    fprec,
    fwmean,
    boundary_prec,
    JF,
    etaF,
    JBr,
    etaBr,
    gc,
    G,
    gcr,
    Gr,
    Jt,
    et,
    yr,
    gr,
    fprec_r,
    fwmean_r,
    marg_mean,
    marg_var,
    state_means,
    state_covs,
):
    """Full two-filter smoother into caller-provided buffers. Returns a status.

    All arrays after boundary_prec are scratch or output storage owned by the
    caller; reusing them across calls avoids repaying allocation and page
    faults on every frame. Output arrays hold garbage when the status is not
    OK.
    """
    K = y.shape[0]
    L = g.shape[0]
    inv_nv = 1.0 / noise_var
    for p in range(L):
        gc[p] = np.conj(g[p]) * inv_nv
    for p in range(L):
        for q in range(L):
            G[p, q] = gc[p] * g[q]

    status = _info_filter(y, gc, G, fprec, fwmean, boundary_prec, JF, etaF, Jt, et)
    if status != OK:
        return status

    # reversed problem: flipped observations and factors; its state filter is
    # the reverse of the reversed taps, i.e. g reversed
    for i in range(K):
        yr[i] = y[K - 1 - i]
    for i in range(L):
        gr[i] = g[L - 1 - i]
    for p in range(L):
        gcr[p] = np.conj(gr[p]) * inv_nv
    for p in range(L):
        for q in range(L):
            Gr[p, q] = gcr[p] * gr[q]
    P = fprec.shape[0]
    for i in range(P):
        fprec_r[i] = fprec[P - 1 - i]
        fwmean_r[i] = fwmean[P - 1 - i]
    status = _info_filter(
        yr, gcr, Gr, fprec_r, fwmean_r, boundary_prec, JBr, etaBr, Jt, et
    )
    if status != OK:
        return status

    return _merge_and_marginalize(
        y, gc, G, fprec, fwmean, JF, etaF, JBr, etaBr,
        marg_mean, marg_var, state_means, state_covs,
    )


@njit(cache=True, error_model="numpy")
def extrinsic_kernel(marg_mean, marg_var, variances, fwmean, m, flat_var, e_mean, e_var, flat):
    """Posterior divided by own prior factor, flat-substituted when degenerate.

    Writes into the caller's e_mean/e_var/flat arrays. Mirrors the numpy route
    in equalizers.extrinsic_arrays operation for operation so both produce
    identical doubles.
    """
    n = marg_mean.shape[0]
    zero = marg_mean[0] - marg_mean[0]  # typed 0 of the field dtype
    for k in range(n):
        v = marg_var[k]
        vt = variances[k]
        gap = vt - v
        if gap >= 1e-14 * vt:
            # 1/(1/v - 1/vt) and the matching mean, with one division
            den = 1.0 / gap
            e_var[k] = v * vt * den
            e_mean[k] = vt * den * (marg_mean[k] - v * fwmean[m + k])
            flat[k] = False
        else:
            e_var[k] = flat_var
            e_mean[k] = zero
            flat[k] = True


@njit(cache=True, error_model="numpy")
def prep_factors_kernel(probs, alph, energies, eps):
    """Row-wise log prior plus Gaussian projection (mean, floored variance)."""
    n, M = probs.shape
    logp = np.empty((n, M), dtype=np.float64)
    mu = np.empty(n, dtype=alph.dtype)
    var = np.empty(n, dtype=np.float64)
    for k in range(n):
        mean = alph[0] - alph[0]  # typed 0
        e2 = 0.0
        for i in range(M):
            p = probs[k, i]
            logp[k, i] = np.log(p if p > 1e-300 else 1e-300)
            mean += p * alph[i]
            e2 += p * energies[i]
        v = e2 - (mean * np.conj(mean)).real
        mu[k] = mean
        var[k] = v if v > eps else eps
    return logp, mu, var


@njit(cache=True, error_model="numpy")
def pad_factor_arrays(means, variances, m, boundary_var, fprec, fwmean):
    """Edge-padded factor precisions and precision-weighted means.

    Fills the caller's (n + 2m)-long fprec/fwmean arrays.
    """
    n = means.shape[0]
    zero = means[0] - means[0]
    bprec = 1.0 / boundary_var
    for j in range(m):
        fprec[j] = bprec
        fwmean[j] = zero
        fprec[n + m + j] = bprec
        fwmean[n + m + j] = zero
    for k in range(n):
        fprec[m + k] = 1.0 / variances[k]
        fwmean[m + k] = means[k] / variances[k]


@njit(cache=True, error_model="numpy")
def ep_update_kernel(mu_e, v_e, logp, alph, energies, mu, var, beta, scale, eps, match_tol):
    """One synchronous refinement sweep, updating (mu, var) in place.

    Per symbol: tilted moments of discrete-prior x extrinsic-Gaussian, moment
    match against the extrinsic, damp in the precision domain, and keep the
    update only when the damped variance is finite and nonnegative. A flat
    substituted extrinsic participates like any other cavity; its update
    refits the factor toward the plain prior projection.
    """
    n = mu_e.shape[0]
    M = alph.shape[0]
    lw = np.empty(M, dtype=np.float64)
    for k in range(n):
        ve = v_e[k]
        me = mu_e[k]
        inv_sv = 1.0 / (scale * ve)
        wmax = -np.inf
        imax = 0
        for i in range(M):
            # |a - mu|^2 expanded; the per-row |mu|^2 constant cancels below
            t = logp[k, i] + (2.0 * (me * np.conj(alph[i])).real - energies[i]) * inv_sv
            lw[i] = t
            if t > wmax:
                wmax = t
                imax = i
        s = 0.0
        mu_p = mu[0] - mu[0]  # typed 0
        e2 = 0.0
        for i in range(M):
            w = 1.0 if i == imax else np.exp(lw[i] - wmax)
            s += w
            mu_p += w * alph[i]
            e2 += w * energies[i]
        mu_p /= s
        e2 /= s
        v_p = e2 - (mu_p * np.conj(mu_p)).real
        if v_p < eps:
            v_p = eps
        den = ve - v_p
        if abs(den) < match_tol * ve:
            continue  # matched already; no update for this symbol
        v_n = v_p * ve / den
        mu_n = v_n * (mu_p / v_p - me / ve)
        p_n = 1.0 / v_n
        p_o = 1.0 / var[k]
        p_d = beta * p_n + (1.0 - beta) * p_o
        v_d = 1.0 / p_d
        mu_d = (beta * mu_n * p_n + (1.0 - beta) * mu[k] * p_o) / p_d
        if v_d >= 0.0 and np.isfinite(v_d) and np.isfinite(mu_d.real) and np.isfinite(mu_d.imag):
            var[k] = v_d
            mu[k] = mu_d


def warmup():
    """Trigger compilation for both field modes on a toy instance."""
    for dtype in (np.float64, np.complex128):
        K, L = 4, 2
        y = np.ones(K, dtype=dtype)
        g = np.ones(L, dtype=dtype)
        fprec = np.ones(K + L - 1, dtype=np.float64)
        fwmean = np.zeros(K + L - 1, dtype=dtype)
        n = K - L + 1
        smoother_kernel(
            y, g, 0.5, fprec, fwmean, 1e10,
            np.empty((K, L, L), dtype=dtype), np.empty((K, L), dtype=dtype),
            np.empty((K, L, L), dtype=dtype), np.empty((K, L), dtype=dtype),
            np.empty(L, dtype=dtype), np.empty((L, L), dtype=dtype),
            np.empty(L, dtype=dtype), np.empty((L, L), dtype=dtype),
            np.empty((L - 1, L - 1), dtype=dtype), np.empty(L - 1, dtype=dtype),
            np.empty(K, dtype=dtype), np.empty(L, dtype=dtype),
            np.empty(K + L - 1, dtype=np.float64), np.empty(K + L - 1, dtype=dtype),
            np.empty(n, dtype=dtype), np.empty(n, dtype=np.float64),
            np.empty((n, L), dtype=dtype), np.empty((n, L, L), dtype=dtype),
        )
        mm = np.zeros(3, dtype=dtype)
        mv = np.full(3, 0.5)
        extrinsic_kernel(
            mm, mv, np.ones(3), np.zeros(5, dtype=dtype), 1, 1e8,
            np.empty(3, dtype=dtype), np.empty(3), np.empty(3, dtype=np.bool_),
        )
        alph = np.array([-1.0, 1.0]).astype(dtype)
        prep_factors_kernel(np.full((3, 2), 0.5), alph, np.abs(alph) ** 2, 1e-8)
        pad_factor_arrays(mm, mv, 1, 1e10, np.empty(5), np.empty(5, dtype=dtype))
        ep_update_kernel(
            mm,
            mv,
            np.full((3, 2), -0.7),
            alph,
            np.abs(alph) ** 2,
            mm.copy(),
            mv.copy(),
            0.1,
            1.0,
            1e-8,
            1e-14,
        )
