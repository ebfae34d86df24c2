"""Pure-numpy LSTM recurrence, used when the compiled kernel is unavailable.

Layout is time-major: ``xs`` is ``(T, B, D)``, state buffers are ``(T + 1, B, H)``
with slot 0 holding the zero initial state, and ``acts`` is ``(T, B, 4H)``
holding the activated gates in order input, forget, candidate, output.
"""
import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_recurrence_forward(xs, wx, wh, b, mask, hs, cs, acts):
    T = xs.shape[0]
    H = wh.shape[0]
    for t in range(T):
        z = xs[t] @ wx
        z += hs[t] @ wh
        z += b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c = f * cs[t] + i * g
        h = o * np.tanh(c)
        m = mask[t].astype(bool)[:, None]
        cs[t + 1] = np.where(m, c, cs[t])
        hs[t + 1] = np.where(m, h, hs[t])
        a = acts[t]
        a[:, :H] = i
        a[:, H:2 * H] = f
        a[:, 2 * H:3 * H] = g
        a[:, 3 * H:] = o
        a *= m


def lstm_recurrence_backward(dh_last, xs, wx, wh, mask, hs, cs, acts, dxs, dwx, dwh, db):
    """Backpropagation through time; accumulates into ``dwx``, ``dwh``, ``db``
    and overwrites ``dxs``."""
    T = xs.shape[0]
    H = wh.shape[0]
    dh = dh_last.copy()
    dc = np.zeros_like(dh)
    for t in range(T - 1, -1, -1):
        m = mask[t].astype(bool)[:, None]
        a = acts[t]
        i = a[:, :H]
        f = a[:, H:2 * H]
        g = a[:, 2 * H:3 * H]
        o = a[:, 3 * H:]
        tc = np.tanh(cs[t + 1])
        dc_t = dc + dh * o * (1.0 - tc * tc)
        dz = np.empty_like(a)
        dz[:, :H] = dc_t * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc_t * cs[t] * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dc_t * i * (1.0 - g * g)
        dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dz *= m
        dwh += hs[t].T @ dz
        dwx += xs[t].T @ dz
        db += dz.sum(axis=0)
        dxs[t] = dz @ wx.T
        dh = np.where(m, dz @ wh.T, dh)
        dc = np.where(m, dc_t * f, dc)
