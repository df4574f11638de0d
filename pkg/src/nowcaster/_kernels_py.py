"""Pure numpy implementations of the hot loops.

These mirror ``_kernels.pyx`` one-for-one and are used whenever the compiled
extension is unavailable (or disabled with ``NOWCASTER_PURE_PYTHON=1``).
Results agree with the compiled versions up to floating-point summation order.
"""
import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

# Status codes shared with the compiled kernel.
OK = 0
BAD_PRIOR_VARIANCE = 1
BAD_OBS_VARIANCE = 2


def lstm_layer_forward(zx, w_h):
    """Run one LSTM layer over all timesteps.

    Parameters
    ----------
    zx : ndarray, shape (N, T, 4H)
        Input projections ``x_t @ W_x.T + b`` for every timestep.
    w_h : ndarray, shape (4H, H)
        Recurrent weights, gate blocks ordered (i, f, g, o).

    Returns
    -------
    hs, cs : ndarray, shape (N, T, H)
        Hidden and cell states.
    gates : ndarray, shape (N, T, 4H)
        Post-activation gate values.
    """
    n, n_steps, four_h = zx.shape
    hsz = four_h // 4
    hs = np.empty((n, n_steps, hsz))
    cs = np.empty((n, n_steps, hsz))
    gates = np.empty((n, n_steps, four_h))
    h = np.zeros((n, hsz))
    c = np.zeros((n, hsz))
    for t in range(n_steps):
        z = zx[:, t] + h @ w_h.T
        i = expit(z[:, :hsz])
        f = expit(z[:, hsz:2 * hsz])
        g = np.tanh(z[:, 2 * hsz:3 * hsz])
        o = expit(z[:, 3 * hsz:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t, :hsz] = i
        gates[:, t, hsz:2 * hsz] = f
        gates[:, t, 2 * hsz:3 * hsz] = g
        gates[:, t, 3 * hsz:] = o
        hs[:, t] = h
        cs[:, t] = c
    return hs, cs, gates


def lstm_layer_backward(dhs, gates, cs, hs, w_h):
    """Backpropagate through one LSTM layer.

    ``dhs`` holds the loss gradient arriving at every hidden state from above
    (the readout or the next layer). Returns the gradient with respect to the
    gate pre-activations, shape (N, T, 4H), and the recurrent weight gradient.
    """
    n, n_steps, hsz = dhs.shape
    dz = np.empty_like(gates)
    dw_h = np.zeros_like(w_h)
    dh_rec = np.zeros((n, hsz))
    dc_rec = np.zeros((n, hsz))
    zeros = np.zeros((n, hsz))
    for t in range(n_steps - 1, -1, -1):
        gt = gates[:, t]
        i = gt[:, :hsz]
        f = gt[:, hsz:2 * hsz]
        g = gt[:, 2 * hsz:3 * hsz]
        o = gt[:, 3 * hsz:]
        c_prev = cs[:, t - 1] if t > 0 else zeros
        tc = np.tanh(cs[:, t])
        dh = dhs[:, t] + dh_rec
        dc = dc_rec + dh * o * (1.0 - tc * tc)
        dzt = dz[:, t]
        dzt[:, :hsz] = dc * g * i * (1.0 - i)
        dzt[:, hsz:2 * hsz] = dc * c_prev * f * (1.0 - f)
        dzt[:, 2 * hsz:3 * hsz] = dc * i * (1.0 - g * g)
        dzt[:, 3 * hsz:] = dh * tc * o * (1.0 - o)
        dc_rec = dc * f
        dh_rec = dzt @ w_h
    if n_steps > 1:
        dw_h = dz[:, 1:].reshape(-1, 4 * hsz).T @ hs[:, :-1].reshape(-1, hsz)
    return dz, dw_h


def arma_residuals(x, intercept, ar, ma):
    """Conditional one-step residuals; the first ``len(ar)`` entries are zero."""
    x = np.asarray(x, dtype=float)
    p = len(ar)
    u = x - intercept
    for k in range(p):
        u[p:] -= ar[k] * x[p - k - 1:len(x) - k - 1]
    u[:p] = 0.0
    if len(ma) == 0:
        return u
    return lfilter([1.0], np.concatenate(([1.0], ma)), u)


def kalman_filter(y, loadings, obs_var, ar, state_var, init_mean, init_var):
    """Univariate-state Kalman filter with missing (NaN) observations.

    Returns ``(status, m_pred, p_pred, m_filt, p_filt, loglik)`` where
    ``status`` is non-zero if a non-positive variance was met.
    """
    n_steps = y.shape[0]
    m_pred = np.zeros(n_steps)
    p_pred = np.zeros(n_steps)
    m_filt = np.zeros(n_steps)
    p_filt = np.zeros(n_steps)
    loglik = np.zeros(n_steps)
    observed = ~np.isnan(y)
    log2pi = np.log(2.0 * np.pi)
    m, p = init_mean, init_var
    for t in range(n_steps):
        if t > 0:
            m = ar * m_filt[t - 1]
            p = ar * ar * p_filt[t - 1] + state_var
        if not p > 0.0:
            return BAD_PRIOR_VARIANCE, m_pred, p_pred, m_filt, p_filt, loglik
        m_pred[t] = m
        p_pred[t] = p
        obs = observed[t]
        if not obs.any():
            m_filt[t] = m
            p_filt[t] = p
            continue
        lam = loadings[obs]
        r = obs_var[obs]
        if not (r > 0.0).all():
            return BAD_OBS_VARIANCE, m_pred, p_pred, m_filt, p_filt, loglik
        yo = y[t, obs]
        s = np.sum(lam * lam / r)
        v = yo - lam * m
        w = np.sum(lam * v / r)
        denom = 1.0 + p * s
        m_filt[t] = m + p * w / denom
        p_filt[t] = p / denom
        loglik[t] = -0.5 * (len(yo) * log2pi + np.sum(np.log(r)) + np.log(denom)
                            + np.sum(v * v / r) - p * w * w / denom)
    return OK, m_pred, p_pred, m_filt, p_filt, loglik


def rts_smoother(m_pred, p_pred, m_filt, p_filt, ar):
    """Rauch-Tung-Striebel pass. Returns smoothed means, variances and gains."""
    n_steps = len(m_filt)
    m_s = m_filt.copy()
    p_s = p_filt.copy()
    gain = np.zeros(n_steps)
    for t in range(n_steps - 2, -1, -1):
        j = p_filt[t] * ar / p_pred[t + 1]
        gain[t] = j
        m_s[t] = m_filt[t] + j * (m_s[t + 1] - m_pred[t + 1])
        p_s[t] = p_filt[t] + j * j * (p_s[t + 1] - p_pred[t + 1])
    return m_s, p_s, gain


def arma_css_minimize(x, p, q, start, maxiter, xatol, fatol):
    """Nelder-Mead over (intercept, ar..., ma...) using scipy.

    Same contract as the compiled version: returns ``(theta, css, iterations)``
    with ``theta`` the raw (unreflected) point.
    """
    from scipy.optimize import minimize

    from .arma import css, make_invertible, make_stationary

    def objective(theta):
        value = css(x, theta[0], make_stationary(theta[1:1 + p]), make_invertible(theta[1 + p:]))
        return value if np.isfinite(value) else 1e300

    res = minimize(objective, np.asarray(start, dtype=float), method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter})
    return np.asarray(res.x), float(res.fun), int(res.nit)
