"""Reference implementations written independently of the package code.

Each one trades speed for transparency: explicit loops, scalar formulas,
brute-force enumeration.
"""

import math

import numpy as np


def central_diff(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f()`` wrt array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def grad_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def conv2d_loops(x, w, stride=1, padding=0):
    b, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((b, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((b, f, oh, ow))
    for n in range(b):
        for o in range(f):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, o, i, j] = float(np.sum(patch * w[o]))
    return out


def ssim_windowed(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03, dynamic_range=1.0):
    """Mean SSIM over all fully-contained 11x11 windows, each window weighted by
    a 2-D Gaussian built directly from its radial formula."""
    r = (size - 1) / 2
    win = np.array([[math.exp(-((i - r) ** 2 + (j - r) ** 2) / (2 * sigma ** 2))
                     for j in range(size)] for i in range(size)])
    win /= win.sum()
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            pa = a[i:i + size, j:j + size]
            pb = b[i:i + size, j:j + size]
            ma = float(np.sum(win * pa))
            mb = float(np.sum(win * pb))
            va = float(np.sum(win * (pa - ma) ** 2))
            vb = float(np.sum(win * (pb - mb) ** 2))
            cov = float(np.sum(win * (pa - ma) * (pb - mb)))
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def kl_monte_carlo(mu_q, s_q, mu_p, s_p, n, rng):
    """E_q[log q(z) - log p(z)] from ``n`` draws of z ~ q (diagonal Gaussians)."""
    z = mu_q + s_q * rng.standard_normal((n, mu_q.size))
    log_q = -0.5 * (((z - mu_q) / s_q) ** 2) - np.log(s_q)
    log_p = -0.5 * (((z - mu_p) / s_p) ** 2) - np.log(s_p)
    return float(np.mean(np.sum(log_q - log_p, axis=1)))


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def lstm_scalar(x, h, c, w_ih, w_hh, b):
    """Single-example LSTM update with Python floats; gate order i, f, g, o."""
    n = len(h)
    pre = [sum(w_ih[r][k] * x[k] for k in range(len(x))) + sum(w_hh[r][k] * h[k] for k in range(n)) + b[r]
           for r in range(4 * n)]
    h2, c2 = [], []
    for k in range(n):
        i = sigmoid(pre[k])
        f = sigmoid(pre[n + k])
        g = math.tanh(pre[2 * n + k])
        o = sigmoid(pre[3 * n + k])
        cn = f * c[k] + i * g
        c2.append(cn)
        h2.append(o * math.tanh(cn))
    return h2, c2


def adam_scalar(grad_fn, w, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float ADAM over a list of coordinates; returns the trajectory end."""
    w = list(w)
    m = [0.0] * len(w)
    v = [0.0] * len(w)
    for t in range(1, steps + 1):
        g = grad_fn(w)
        for i in range(len(w)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            mh = m[i] / (1 - b1 ** t)
            vh = v[i] / (1 - b2 ** t)
            w[i] -= lr * mh / (math.sqrt(vh) + eps)
    return w


def displacement_pmf_grid(a, lo, hi, limit, n=400_000):
    """Midpoint-rule pmf of round(clip(a+u, 0, limit)) - round(a), u ~ U[lo, hi]."""
    u = lo + (np.arange(n) + 0.5) * (hi - lo) / n
    pos = np.clip(a + u, 0, limit)
    d = np.floor(pos + 0.5) - math.floor(a + 0.5)
    out = np.zeros(17)
    for k in range(-8, 9):
        out[k + 8] = np.mean(d == k)
    return out


def svg_param_count(frame_size, channels, h_dim, g_dim, z_dim, rnn, pred_layers, post_layers,
                    prior_layers, mode):
    """Trainable scalar count derived from the layer list."""
    conv = lambda ci, co, k: co * ci * k * k + co
    lin = lambda i, o: i * o + o
    lstm = lambda i, n: 4 * n * i + 4 * n * n + 4 * n
    chans = (1,) + tuple(channels)
    enc = sum(conv(chans[i], chans[i + 1], 4) for i in range(len(channels))) + conv(channels[-1], h_dim, 4)
    outs = (max(channels[0] // 2, 1),) + tuple(channels[:-1])
    dec = lin(g_dim, channels[-1] * 16)
    dec += sum(conv(2 * channels[k], outs[k], 3) for k in range(len(channels)))
    dec += conv(outs[0], 1, 3)

    def stack(n_in, n_out, layers, heads=1):
        return lin(n_in, rnn) + layers * lstm(rnn, rnn) + heads * lin(rnn, n_out)

    z_in = 0 if mode == "det" else z_dim
    total = enc + dec + stack(h_dim + z_in, g_dim, pred_layers)
    if mode != "det":
        total += stack(h_dim, z_dim, post_layers, heads=2)
    if mode == "lp":
        total += stack(h_dim, z_dim, prior_layers, heads=2)
    return total
