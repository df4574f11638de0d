# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: LSTM recurrences, ARMA residuals, Kalman filtering.

Signatures and return values match ``_kernels_py`` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh, log, isnan, M_PI
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

OK = 0
BAD_PRIOR_VARIANCE = 1
BAD_OBS_VARIANCE = 2


cdef inline double _sigmoid(double x) noexcept nogil:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def lstm_layer_forward(double[:, :, ::1] zx, double[:, ::1] w_h):
    # sigmoid(x) = (1 + tanh(x / 2)) / 2 lets one vectorized tanh call per
    # timestep evaluate all four gate blocks; scalar libm calls are far slower.
    cdef int n = zx.shape[0], n_steps = zx.shape[1], four_h = zx.shape[2]
    cdef int hsz = four_h // 4
    hs_arr = np.empty((n, n_steps, hsz))
    cs_arr = np.empty((n, n_steps, hsz))
    gates_arr = np.empty((n, n_steps, four_h))
    zbuf_arr = np.empty((n, four_h))
    cbuf_arr = np.empty((n, hsz))
    cdef double[:, :, ::1] hs = hs_arr
    cdef double[:, :, ::1] cs = cs_arr
    cdef double[:, :, ::1] gates = gates_arr
    cdef double[:, ::1] zbuf = zbuf_arr
    cdef double[:, ::1] cbuf = cbuf_arr
    cdef int b, t, j
    cdef int ld_h = n_steps * hsz
    cdef double one = 1.0
    cdef double c_prev, gi, gf, gg, go
    for t in range(n_steps):
        with nogil:
            for b in range(n):
                for j in range(four_h):
                    zbuf[b, j] = zx[b, t, j]
            if t > 0:
                # zbuf += hs[:, t-1] @ w_h.T  (column-major view)
                dgemm(b"T", b"N", &four_h, &n, &hsz, &one, &w_h[0, 0], &hsz,
                      &hs[0, t - 1, 0], &ld_h, &one, &zbuf[0, 0], &four_h)
            for b in range(n):
                for j in range(hsz):
                    zbuf[b, j] *= 0.5
                    zbuf[b, hsz + j] *= 0.5
                    zbuf[b, 3 * hsz + j] *= 0.5
        np.tanh(zbuf_arr, out=zbuf_arr)
        with nogil:
            for b in range(n):
                for j in range(hsz):
                    gi = 0.5 + 0.5 * zbuf[b, j]
                    gf = 0.5 + 0.5 * zbuf[b, hsz + j]
                    gg = zbuf[b, 2 * hsz + j]
                    go = 0.5 + 0.5 * zbuf[b, 3 * hsz + j]
                    c_prev = cs[b, t - 1, j] if t > 0 else 0.0
                    cs[b, t, j] = gf * c_prev + gi * gg
                    cbuf[b, j] = cs[b, t, j]
                    gates[b, t, j] = gi
                    gates[b, t, hsz + j] = gf
                    gates[b, t, 2 * hsz + j] = gg
                    gates[b, t, 3 * hsz + j] = go
        np.tanh(cbuf_arr, out=cbuf_arr)
        with nogil:
            for b in range(n):
                for j in range(hsz):
                    hs[b, t, j] = gates[b, t, 3 * hsz + j] * cbuf[b, j]
    return hs_arr, cs_arr, gates_arr


def lstm_layer_backward(double[:, :, ::1] dhs, double[:, :, ::1] gates,
                        double[:, :, ::1] cs, double[:, :, ::1] hs,
                        double[:, ::1] w_h):
    cdef int n = dhs.shape[0], n_steps = dhs.shape[1], hsz = dhs.shape[2]
    cdef int four_h = 4 * hsz
    dz_arr = np.empty((n, n_steps, four_h))
    rec_arr = np.zeros((2, n, hsz))
    cdef double[:, :, ::1] dz = dz_arr
    cdef double[:, ::1] dh_rec = rec_arr[0]
    cdef double[:, ::1] dc_rec = rec_arr[1]
    cdef int b, t, j
    cdef int ld_z = n_steps * four_h
    cdef double one = 1.0, zero = 0.0
    cdef double gi, gf, gg, go, tc, dh, dc, c_prev
    cdef double[:, :, ::1] tcs = np.tanh(cs)
    with nogil:
        for t in range(n_steps - 1, -1, -1):
            for b in range(n):
                for j in range(hsz):
                    gi = gates[b, t, j]
                    gf = gates[b, t, hsz + j]
                    gg = gates[b, t, 2 * hsz + j]
                    go = gates[b, t, 3 * hsz + j]
                    c_prev = cs[b, t - 1, j] if t > 0 else 0.0
                    tc = tcs[b, t, j]
                    dh = dhs[b, t, j] + dh_rec[b, j]
                    dc = dc_rec[b, j] + dh * go * (1.0 - tc * tc)
                    dz[b, t, j] = dc * gg * gi * (1.0 - gi)
                    dz[b, t, hsz + j] = dc * c_prev * gf * (1.0 - gf)
                    dz[b, t, 2 * hsz + j] = dc * gi * (1.0 - gg * gg)
                    dz[b, t, 3 * hsz + j] = dh * tc * go * (1.0 - go)
                    dc_rec[b, j] = dc * gf
            # dh_rec = dz[:, t] @ w_h
            dgemm(b"N", b"N", &hsz, &n, &four_h, &one, &w_h[0, 0], &hsz,
                  &dz[0, t, 0], &ld_z, &zero, &dh_rec[0, 0], &hsz)
    if n_steps > 1:
        dw_arr = dz_arr[:, 1:].reshape(-1, four_h).T @ hs_arr_prev(hs, n_steps)
    else:
        dw_arr = np.zeros((four_h, hsz))
    return dz_arr, dw_arr


cdef object hs_arr_prev(double[:, :, ::1] hs, int n_steps):
    arr = np.asarray(hs)
    return arr[:, :n_steps - 1].reshape(-1, arr.shape[2])


def arma_residuals(x_in, double intercept, ar_in, ma_in):
    cdef const double[::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef const double[::1] ar = np.ascontiguousarray(ar_in, dtype=np.float64)
    cdef const double[::1] ma = np.ascontiguousarray(ma_in, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], p = ar.shape[0], q = ma.shape[0]
    e_arr = np.zeros(n)
    cdef double[::1] e = e_arr
    cdef Py_ssize_t t, k
    cdef double acc
    with nogil:
        for t in range(p, n):
            acc = x[t] - intercept
            for k in range(p):
                acc = acc - ar[k] * x[t - k - 1]
            for k in range(q):
                if t - k - 1 >= 0:
                    acc = acc - ma[k] * e[t - k - 1]
            e[t] = acc
    return e_arr


def kalman_filter(y_in, loadings_in, obs_var_in, double ar, double state_var,
                  double init_mean, double init_var):
    cdef const double[:, ::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef const double[::1] lam = np.ascontiguousarray(loadings_in, dtype=np.float64)
    cdef const double[::1] r = np.ascontiguousarray(obs_var_in, dtype=np.float64)
    cdef Py_ssize_t n_steps = y.shape[0], n_obs = y.shape[1]
    m_pred_arr = np.zeros(n_steps)
    p_pred_arr = np.zeros(n_steps)
    m_filt_arr = np.zeros(n_steps)
    p_filt_arr = np.zeros(n_steps)
    ll_arr = np.zeros(n_steps)
    cdef double[::1] m_pred = m_pred_arr
    cdef double[::1] p_pred = p_pred_arr
    cdef double[::1] m_filt = m_filt_arr
    cdef double[::1] p_filt = p_filt_arr
    cdef double[::1] loglik = ll_arr
    cdef Py_ssize_t t, j
    cdef int status = 0, k
    cdef double m = init_mean, p = init_var, s, w, vv, logr, v, denom
    cdef double log2pi = log(2.0 * M_PI)
    with nogil:
        for t in range(n_steps):
            if t > 0:
                m = ar * m_filt[t - 1]
                p = ar * ar * p_filt[t - 1] + state_var
            if not p > 0.0:
                status = 1
                break
            m_pred[t] = m
            p_pred[t] = p
            s = 0.0
            w = 0.0
            vv = 0.0
            logr = 0.0
            k = 0
            for j in range(n_obs):
                if isnan(y[t, j]):
                    continue
                if not r[j] > 0.0:
                    status = 2
                    break
                v = y[t, j] - lam[j] * m
                s = s + lam[j] * lam[j] / r[j]
                w = w + lam[j] * v / r[j]
                vv = vv + v * v / r[j]
                logr = logr + log(r[j])
                k = k + 1
            if status != 0:
                break
            if k == 0:
                m_filt[t] = m
                p_filt[t] = p
                continue
            denom = 1.0 + p * s
            m_filt[t] = m + p * w / denom
            p_filt[t] = p / denom
            loglik[t] = -0.5 * (k * log2pi + logr + log(denom) + vv - p * w * w / denom)
    return status, m_pred_arr, p_pred_arr, m_filt_arr, p_filt_arr, ll_arr


def rts_smoother(m_pred_in, p_pred_in, m_filt_in, p_filt_in, double ar):
    cdef const double[::1] m_pred = np.ascontiguousarray(m_pred_in, dtype=np.float64)
    cdef const double[::1] p_pred = np.ascontiguousarray(p_pred_in, dtype=np.float64)
    cdef const double[::1] m_filt = np.ascontiguousarray(m_filt_in, dtype=np.float64)
    cdef const double[::1] p_filt = np.ascontiguousarray(p_filt_in, dtype=np.float64)
    cdef Py_ssize_t n_steps = m_filt.shape[0]
    m_s_arr = np.array(m_filt, copy=True)
    p_s_arr = np.array(p_filt, copy=True)
    gain_arr = np.zeros(n_steps)
    cdef double[::1] m_s = m_s_arr
    cdef double[::1] p_s = p_s_arr
    cdef double[::1] gain = gain_arr
    cdef Py_ssize_t t
    cdef double j
    with nogil:
        for t in range(n_steps - 2, -1, -1):
            j = p_filt[t] * ar / p_pred[t + 1]
            gain[t] = j
            m_s[t] = m_filt[t] + j * (m_s[t + 1] - m_pred[t + 1])
            p_s[t] = p_filt[t] + j * j * (p_s[t + 1] - p_pred[t + 1])
    return m_s_arr, p_s_arr, gain_arr


# -- ARMA conditional-sum-of-squares minimization ---------------------------

from libc.math cimport sqrt, fabs, isfinite

cdef double _MARGIN = 1e-6


cdef inline double _fix_real_root(double r) noexcept nogil:
    cdef double mod = fabs(r)
    if mod > 1.0 / (1.0 - _MARGIN):
        return 1.0 / r
    if mod >= 1.0 - _MARGIN:
        return (1.0 - 10.0 * _MARGIN) if r > 0 else -(1.0 - 10.0 * _MARGIN)
    return r


cdef void _stationary(double* a, int p) noexcept nogil:
    """Closed-form root reflection for p <= 2 (coefficients modified in place)."""
    cdef double lim = 1.0 - 4.0 * _MARGIN
    cdef double disc, sq, r1, r2, mod, re
    if p == 1:
        if fabs(a[0]) >= lim:
            a[0] = _fix_real_root(a[0])
    elif p == 2:
        if fabs(a[1]) < lim and a[0] + a[1] < lim and a[1] - a[0] < lim:
            return
        disc = a[0] * a[0] + 4.0 * a[1]
        if disc >= 0:
            sq = sqrt(disc)
            r1 = _fix_real_root(0.5 * (a[0] + sq))
            r2 = _fix_real_root(0.5 * (a[0] - sq))
            a[0] = r1 + r2
            a[1] = -r1 * r2
        else:
            mod = sqrt(-a[1])
            re = 0.5 * a[0]
            if mod > 1.0 / (1.0 - _MARGIN):
                re = re / (mod * mod)
                mod = 1.0 / mod
            elif mod >= 1.0 - _MARGIN:
                re = re / mod * (1.0 - 10.0 * _MARGIN)
                mod = 1.0 - 10.0 * _MARGIN
            a[0] = 2.0 * re
            a[1] = -mod * mod


cdef double _css(const double* x, Py_ssize_t n, const double* theta, int p, int q,
                 double* e) noexcept nogil:
    cdef double ar[2]
    cdef double ma[2]
    cdef int k
    cdef Py_ssize_t t
    cdef double acc, total = 0.0
    for k in range(p):
        ar[k] = theta[1 + k]
    for k in range(q):
        ma[k] = -theta[1 + p + k]
    _stationary(ar, p)
    _stationary(ma, q)
    for k in range(q):
        ma[k] = -ma[k]
    for t in range(n):
        e[t] = 0.0
    for t in range(p, n):
        acc = x[t] - theta[0]
        for k in range(p):
            acc = acc - ar[k] * x[t - k - 1]
        for k in range(q):
            if t - k - 1 >= 0:
                acc = acc - ma[k] * e[t - k - 1]
        e[t] = acc
        total = total + acc * acc
    if not isfinite(total):
        return 1e300
    return total


cdef void _sort_simplex(double* sim, double* fsim, int d, double* tmp) noexcept nogil:
    cdef int i, j, k
    cdef double fv
    for i in range(1, d + 1):
        fv = fsim[i]
        for k in range(d):
            tmp[k] = sim[i * d + k]
        j = i - 1
        while j >= 0 and fsim[j] > fv:
            fsim[j + 1] = fsim[j]
            for k in range(d):
                sim[(j + 1) * d + k] = sim[j * d + k]
            j -= 1
        fsim[j + 1] = fv
        for k in range(d):
            sim[(j + 1) * d + k] = tmp[k]


def arma_css_minimize(x_in, int p, int q, start_in, int maxiter, double xatol, double fatol):
    """Nelder-Mead over (intercept, ar..., ma...) for p, q <= 2.

    Returns ``(theta, css, iterations)``; ``theta`` is the raw simplex point
    (callers re-apply the root reflection).
    """
    if p > 2 or q > 2:
        raise ValueError("compiled CSS minimizer supports p, q <= 2")
    cdef const double[::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef const double[::1] start = np.ascontiguousarray(start_in, dtype=np.float64)
    cdef int d = 1 + p + q
    cdef Py_ssize_t n = x.shape[0]
    sim_arr = np.empty((d + 1) * d)
    fsim_arr = np.empty(d + 1)
    work_arr = np.empty(5 * d)
    e_arr = np.empty(max(n, 1))
    cdef double[::1] sim = sim_arr
    cdef double[::1] fsim = fsim_arr
    cdef double[::1] work = work_arr
    cdef double[::1] e = e_arr
    cdef double* xbar = &work[0]
    cdef double* xr = &work[d]
    cdef double* xe = &work[2 * d]
    cdef double* xc = &work[3 * d]
    cdef double* tmp = &work[4 * d]
    cdef int i, k, it = 1
    cdef bint shrink
    cdef double fxr, fxe, fxc, dx, df
    with nogil:
        for k in range(d):
            sim[k] = start[k]
        for i in range(d):
            for k in range(d):
                sim[(i + 1) * d + k] = start[k]
            if start[i] != 0:
                sim[(i + 1) * d + i] = 1.05 * start[i]
            else:
                sim[(i + 1) * d + i] = 0.00025
        for i in range(d + 1):
            fsim[i] = _css(&x[0], n, &sim[i * d], p, q, &e[0])
        _sort_simplex(&sim[0], &fsim[0], d, tmp)
        while it < maxiter:
            dx = 0.0
            df = 0.0
            for i in range(1, d + 1):
                df = max(df, fabs(fsim[i] - fsim[0]))
                for k in range(d):
                    dx = max(dx, fabs(sim[i * d + k] - sim[k]))
            if dx <= xatol and df <= fatol:
                break
            for k in range(d):
                xbar[k] = 0.0
                for i in range(d):
                    xbar[k] += sim[i * d + k]
                xbar[k] /= d
            for k in range(d):
                xr[k] = 2.0 * xbar[k] - sim[d * d + k]
            fxr = _css(&x[0], n, xr, p, q, &e[0])
            shrink = False
            if fxr < fsim[0]:
                for k in range(d):
                    xe[k] = 3.0 * xbar[k] - 2.0 * sim[d * d + k]
                fxe = _css(&x[0], n, xe, p, q, &e[0])
                if fxe < fxr:
                    for k in range(d):
                        sim[d * d + k] = xe[k]
                    fsim[d] = fxe
                else:
                    for k in range(d):
                        sim[d * d + k] = xr[k]
                    fsim[d] = fxr
            elif fxr < fsim[d - 1]:
                for k in range(d):
                    sim[d * d + k] = xr[k]
                fsim[d] = fxr
            else:
                if fxr < fsim[d]:
                    for k in range(d):
                        xc[k] = 1.5 * xbar[k] - 0.5 * sim[d * d + k]
                    fxc = _css(&x[0], n, xc, p, q, &e[0])
                    shrink = not (fxc <= fxr)
                else:
                    for k in range(d):
                        xc[k] = 0.5 * xbar[k] + 0.5 * sim[d * d + k]
                    fxc = _css(&x[0], n, xc, p, q, &e[0])
                    shrink = not (fxc < fsim[d])
                if not shrink:
                    for k in range(d):
                        sim[d * d + k] = xc[k]
                    fsim[d] = fxc
                else:
                    for i in range(1, d + 1):
                        for k in range(d):
                            sim[i * d + k] = sim[k] + 0.5 * (sim[i * d + k] - sim[k])
                        fsim[i] = _css(&x[0], n, &sim[i * d], p, q, &e[0])
            _sort_simplex(&sim[0], &fsim[0], d, tmp)
            it += 1
    return np.array(sim_arr[:d]), float(fsim[0]), it
