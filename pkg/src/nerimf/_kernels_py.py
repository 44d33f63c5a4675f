"""NumPy implementations of the compiled kernels (same signatures, same results)."""
import numpy as np

_CHUNK = 1 << 22


def node_moments(u, alpha, logw):
    u = np.ascontiguousarray(u, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    logw = np.asarray(logw, dtype=np.float64)
    if alpha.size == 1:
        logs0 = alpha[0] * u + logw[0]
        return logs0, np.full_like(u, alpha[0]), np.full_like(u, alpha[0] ** 2)
    logs0 = np.empty_like(u)
    r1 = np.empty_like(u)
    r2 = np.empty_like(u)
    step = max(1, _CHUNK // alpha.size)
    for start in range(0, u.size, step):
        sl = slice(start, start + step)
        t = np.multiply.outer(u[sl], alpha) + logw
        m = t.max(axis=1)
        e = np.exp(t - m[:, None])
        s0 = e.sum(axis=1)
        logs0[sl] = m + np.log(s0)
        r1[sl] = (e @ alpha) / s0
        r2[sl] = (e @ (alpha * alpha)) / s0
    return logs0, r1, r2


def _wrap(d, period):
    if period > 0.0:
        d = d - period * np.floor(d / period + 0.5)
    return d


def ball_masses(x, y, mass, cx, cy, radii, period_x=0.0, period_y=0.0):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mass = np.asarray(mass, dtype=np.float64)
    cx = np.asarray(cx, dtype=np.float64)
    cy = np.asarray(cy, dtype=np.float64)
    r2 = np.square(np.asarray(radii, dtype=np.float64))
    nr = r2.size
    out = np.zeros((cx.size, nr + 1))
    step = max(1, _CHUNK // max(1, x.size))
    for start in range(0, cx.size, step):
        sl = slice(start, start + step)
        dx = _wrap(x[None, :] - cx[sl, None], period_x)
        dy = _wrap(y[None, :] - cy[sl, None], period_y)
        idx = np.searchsorted(r2, dx * dx + dy * dy, side="left")
        for row, c in enumerate(range(*sl.indices(cx.size))):
            out[c] = np.bincount(idx[row], weights=mass, minlength=nr + 1)
    return np.cumsum(out[:, :nr], axis=1)
