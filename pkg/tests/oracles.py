"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive (nested loops, per-coordinate finite
differences) and shares no code with the package.
"""
import numpy as np


def naive_conv2d(x, w, b, pad=1):
    n, cin, h, wd = x.shape
    cout, cin2, kh, kw = w.shape
    assert cin == cin2
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for ni in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(kh):
                            for kj in range(kw):
                                ii, jj = i + ki - pad, j + kj - pad
                                if 0 <= ii < h and 0 <= jj < wd:
                                    acc += x[ni, ci, ii, jj] * w[co, ci, ki, kj]
                    out[ni, co, i, j] = acc + b[co]
    return out


def naive_avgpool(x):
    """3x3 window, stride 2, zero pad 1, fixed divisor 9."""
    n, c, h, w = x.shape
    ho, wo = -(-h // 2), -(-w // 2)
    out = np.zeros((n, c, ho, wo), dtype=np.float64)
    for ni in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ki in range(3):
                        for kj in range(3):
                            ii, jj = 2 * i + ki - 1, 2 * j + kj - 1
                            if 0 <= ii < h and 0 <= jj < w:
                                acc += x[ni, ci, ii, jj]
                    out[ni, ci, i, j] = acc / 9.0
    return out


def naive_linear(x, w, b):
    n, d = x.shape
    k = w.shape[0]
    out = np.zeros((n, k), dtype=np.float64)
    for ni in range(n):
        for ko in range(k):
            acc = 0.0
            for di in range(d):
                acc += x[ni, di] * w[ko, di]
            out[ni, ko] = acc + b[ko]
    return out


def naive_attention_pool(x, p):
    n, c, h, w = x.shape
    out = np.zeros((n, h, w), dtype=np.float64)
    for ni in range(n):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for ci in range(c):
                    acc += abs(x[ni, ci, i, j]) ** p
                out[ni, i, j] = acc
    return out


def fd_gradient(f, x, h):
    """Central finite differences of a scalar function, one coordinate at a
    time. ``h`` may be a scalar or a per-coordinate array."""
    x = np.asarray(x, dtype=np.float64)
    hs = np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp = x.copy()
        xp[i] += hs[i]
        xm = x.copy()
        xm[i] -= hs[i]
        g[i] = (f(xp) - f(xm)) / (2 * hs[i])
    return g


def max_rel_err(a, b, floor=None):
    """Largest |a - b| / max(|a|, |b|, floor) over all entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    if floor is None:
        floor = 1e-6 * scale
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())
