"""Numba kernels for the two hot inner loops: the exact fused-lasso dynamic
program and lasso coordinate-descent sweeps."""

import numpy as np
from numba import njit


@njit(cache=True)
def dp_fused_weighted(b, w, lam):
    """Exact minimizer of sum_i w_i/2 (x_i - b_i)^2 + lam * sum_i |x_{i+1} - x_i|.

    Dynamic programming over the piecewise-linear derivative of the forward
    messages; all observation weights must be positive.  O(n).
    """
    n = b.shape[0]
    x = np.empty(n)
    if n == 1:
        x[0] = b[0]
        return x
    if lam <= 0.0:
        for i in range(n):
            x[i] = b[i]
        return x

    cap = 2 * n + 2
    pos = np.empty(cap)
    da = np.empty(cap)
    db = np.empty(cap)
    head = n
    tail = n - 1  # deque empty when head > tail
    tm = np.empty(n - 1)
    tp = np.empty(n - 1)

    afirst = w[0]
    bfirst = -w[0] * b[0]
    alast = w[0]
    blast = -w[0] * b[0]

    for i in range(n - 1):
        # leftmost point where the message derivative reaches -lam
        a = afirst
        c = bfirst
        lo = head
        while lo <= tail and a * pos[lo] + c < -lam:
            a += da[lo]
            c += db[lo]
            lo += 1
        tminus = (-lam - c) / a
        aminus = a
        bminus = c
        # rightmost point where it reaches +lam
        a = alast
        c = blast
        hi = tail
        while hi >= lo and a * pos[hi] + c > lam:
            a -= da[hi]
            c -= db[hi]
            hi -= 1
        tplus = (lam - c) / a
        aplus = a
        bplus = c

        tm[i] = tminus
        tp[i] = tplus

        # clip the message and add the next data term
        head = lo - 1
        tail = hi + 1
        pos[head] = tminus
        da[head] = aminus
        db[head] = bminus + lam
        pos[tail] = tplus
        da[tail] = -aplus
        db[tail] = lam - bplus
        wk = w[i + 1]
        afirst = wk
        bfirst = -lam - wk * b[i + 1]
        alast = wk
        blast = lam - wk * b[i + 1]

    # minimize the final message
    a = afirst
    c = bfirst
    lo = head
    while lo <= tail and a * pos[lo] + c < 0.0:
        a += da[lo]
        c += db[lo]
        lo += 1
    x[n - 1] = -c / a
    for i in range(n - 2, -1, -1):
        if x[i + 1] < tm[i]:
            x[i] = tm[i]
        elif x[i + 1] > tp[i]:
            x[i] = tp[i]
        else:
            x[i] = x[i + 1]
    return x


@njit(cache=True)
def lasso_cd_sweeps(xcols, y, lam, pf, col_ss, beta, resid, active_only, active_mask, tol_delta):
    """One coordinate-descent pass; updates beta/resid in place.

    xcols is Fortran-ordered (n, p); col_ss[j] = ||X_j||^2 / n; pf[j] is the
    per-column penalty factor (0 leaves the column unpenalized).  Returns the
    largest rescaled coefficient move of the pass.
    """
    n, p = xcols.shape
    max_delta = 0.0
    for j in range(p):
        if active_only and not active_mask[j]:
            continue
        cj = col_ss[j]
        if cj <= 0.0:
            continue
        bj = beta[j]
        g = 0.0
        for i in range(n):
            g += xcols[i, j] * resid[i]
        g = g / n + cj * bj
        t = lam * pf[j]
        if g > t:
            nb = (g - t) / cj
        elif g < -t:
            nb = (g + t) / cj
        else:
            nb = 0.0
        if nb != bj:
            d = nb - bj
            for i in range(n):
                resid[i] -= d * xcols[i, j]
            beta[j] = nb
            move = abs(d) * np.sqrt(cj)
            if move > max_delta:
                max_delta = move
            active_mask[j] = nb != 0.0
        else:
            active_mask[j] = bj != 0.0
    return max_delta


@njit(cache=True)
def lasso_kkt_violation(xcols, resid, lam, pf, beta):
    """Largest absolute violation of the lasso stationarity conditions."""
    n, p = xcols.shape
    worst = 0.0
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += xcols[i, j] * resid[i]
        g /= n
        t = lam * pf[j]
        if beta[j] > 0.0:
            v = abs(g - t)
        elif beta[j] < 0.0:
            v = abs(g + t)
        else:
            v = abs(g) - t
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def banded_chol_factor(ab_lower, out):
    """Cholesky factor of a symmetric positive definite banded matrix.

    ``ab_lower[i, t]`` holds A[i, i - bw + t] (t = bw is the diagonal); the
    factor is written to ``out`` in the same layout.  Returns the smallest
    pivot (squared diagonal entry) encountered; non-positive means failure.
    """
    n, width = ab_lower.shape
    bw = width - 1
    min_pivot = np.inf
    for i in range(n):
        jlo = i - bw
        if jlo < 0:
            jlo = 0
        for j in range(jlo, i + 1):
            s = ab_lower[i, j - i + bw]
            plo = i - bw
            if j - bw > plo:
                plo = j - bw
            if plo < 0:
                plo = 0
            for p in range(plo, j):
                s -= out[i, p - i + bw] * out[j, p - j + bw]
            if j < i:
                out[i, j - i + bw] = s / out[j, bw]
            else:
                if s <= 0.0:
                    return s
                if s < min_pivot:
                    min_pivot = s
                out[i, bw] = np.sqrt(s)
    return min_pivot


@njit(cache=True)
def banded_chol_solve(lb, b, x):
    """Solve L L' x = b for a lower-banded Cholesky factor in compact form."""
    n, width = lb.shape
    bw = width - 1
    for i in range(n):
        s = b[i]
        jlo = i - bw
        if jlo < 0:
            jlo = 0
        for j in range(jlo, i):
            s -= lb[i, j - i + bw] * x[j]
        x[i] = s / lb[i, bw]
    for i in range(n - 1, -1, -1):
        s = x[i]
        jhi = i + bw
        if jhi > n - 1:
            jhi = n - 1
        for j in range(i + 1, jhi + 1):
            s -= lb[j, i - j + bw] * x[j]
        x[i] = s / lb[i, bw]


@njit(cache=True)
def _band_matvec(band, x, out):
    # band rows span columns i..i+width-1 (lower bandwidth 0)
    rows, width = band.shape
    for i in range(rows):
        s = 0.0
        for d in range(width):
            s += band[i, d] * x[i + d]
        out[i] = s


@njit(cache=True)
def _band_rmatvec(band, v, out):
    rows, width = band.shape
    for j in range(out.shape[0]):
        out[j] = 0.0
    for i in range(rows):
        vi = v[i]
        for d in range(width):
            out[i + d] += band[i, d] * vi
    return out


@njit(cache=True)
def tf_admm_loop(
    m_band,
    gram_lower,
    w,
    y,
    gamma,
    rho,
    theta,
    alpha,
    dual,
    tol,
    max_iters,
    balance,
):
    """Specialized ADMM for trend filtering with the split a = D^(k) theta.

    theta/alpha/dual are updated in place; returns (iterations, converged,
    rho, pivot_failure).  The th-system I/n + rho * D^(k)'D^(k) is factored
    by the banded Cholesky above and refactored whenever rho is rebalanced.
    """
    n = y.shape[0]
    rows = m_band.shape[0]
    width_g = gram_lower.shape[1]
    system = np.empty_like(gram_lower)
    factor = np.empty_like(gram_lower)
    rhs = np.empty(n)
    m_theta = np.empty(rows)
    back = np.empty(n)
    dp_w = np.empty(rows)
    dp_b = np.empty(rows)
    inv_n = 1.0 / n

    def_refactor = True
    iterations = 0
    converged = False
    for it in range(1, max_iters + 1):
        iterations = it
        if def_refactor:
            for i in range(n):
                for t in range(width_g):
                    system[i, t] = rho * gram_lower[i, t]
                system[i, width_g - 1] += inv_n
            piv = banded_chol_factor(system, factor)
            if piv <= 0.0:
                return iterations, False, rho, True
            def_refactor = False
        # theta update
        for i in range(rows):
            m_theta[i] = alpha[i] - dual[i]
        _band_rmatvec(m_band, m_theta, back)
        for i in range(n):
            rhs[i] = y[i] * inv_n + rho * back[i]
        banded_chol_solve(factor, rhs, theta)
        _band_matvec(m_band, theta, m_theta)
        # alpha update through the weighted fused lasso on x = W alpha
        for i in range(rows):
            wi = w[i]
            dp_b[i] = wi * (m_theta[i] + dual[i])
            dp_w[i] = rho / (wi * wi)
        x = dp_fused_weighted(dp_b, dp_w, gamma)
        r_dual_sq = 0.0
        alpha_norm_sq = 0.0
        for i in range(rows):
            new_alpha = x[i] / w[i]
            dp_b[i] = new_alpha - alpha[i]  # reuse as the alpha change
            alpha[i] = new_alpha
            alpha_norm_sq += new_alpha * new_alpha
        _band_rmatvec(m_band, dp_b, back)
        for i in range(n):
            r_dual_sq += back[i] * back[i]
        r_dual = rho * np.sqrt(r_dual_sq)
        r_primal_sq = 0.0
        m_theta_sq = 0.0
        for i in range(rows):
            diff = m_theta[i] - alpha[i]
            dual[i] += diff
            r_primal_sq += diff * diff
            m_theta_sq += m_theta[i] * m_theta[i]
        r_primal = np.sqrt(r_primal_sq)
        _band_rmatvec(m_band, dual, back)
        dual_scale_sq = 0.0
        for i in range(n):
            dual_scale_sq += back[i] * back[i]
        scale_p = 1.0 + np.sqrt(max(m_theta_sq, alpha_norm_sq))
        scale_d = 1.0 + rho * np.sqrt(dual_scale_sq)
        if r_primal / scale_p <= tol and r_dual / scale_d <= tol:
            converged = True
            break
        if balance:
            if r_primal > 10.0 * r_dual:
                rho *= 2.0
                for i in range(rows):
                    dual[i] /= 2.0
                def_refactor = True
            elif r_dual > 10.0 * r_primal:
                rho /= 2.0
                for i in range(rows):
                    dual[i] *= 2.0
                def_refactor = True
    return iterations, converged, rho, False
