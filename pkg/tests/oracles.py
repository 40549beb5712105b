"""Independent reference computations used by the test-suite.

Everything here is written with plain loops over floats so that it shares no
code path with the vectorised library implementations it checks.
"""

import math

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    B, cin, H, W = x.shape
    cout, cin_g, k, _ = w.shape
    ho = (H + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    wo = (W + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    cout_g = cout // groups
    out = np.zeros((B, cout, ho, wo))
    for n in range(B):
        for o in range(cout):
            g = o // cout_g
            for r in range(ho):
                for c in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(cin_g):
                        for i in range(k):
                            for j in range(k):
                                rr = r * stride - padding + i * dilation
                                cc = c * stride - padding + j * dilation
                                if 0 <= rr < H and 0 <= cc < W:
                                    acc += x[n, g * cin_g + ci, rr, cc] * w[o, ci, i, j]
                    out[n, o, r, c] = acc
    return out


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_gru(h, x, p):
    """GRU update on 1x1 kernels, cell by cell. ``p`` maps names to floats."""
    out = np.zeros_like(h)
    for idx in np.ndindex(h.shape):
        hv, xv = h[idx], x[idx]
        z = sigmoid(p["wz"] * xv + p["uz"] * hv + p["bz"])
        r = sigmoid(p["wr"] * xv + p["ur"] * hv + p["br"])
        ht = math.tanh(p["wh"] * xv + p["uh"] * (r * hv) + p["bh"])
        out[idx] = (1 - z) * hv + z * ht
    return out


def mrf_marginal_loops(neighbors, q, kernels, biases):
    """Product-form marginal with explicit loops.

    ``neighbors[r]`` lists v; ``kernels[(v, r)]`` is a square odd-size array
    applied as same-padded cross-correlation to ``q[v]``.
    """
    n, H, W = q.shape
    out = np.zeros_like(q)
    for r in range(n):
        prod = np.ones((H, W))
        if not neighbors[r]:
            out[r] = 1.0 / (H * W)
            continue
        for v in neighbors[r]:
            ker = kernels[(v, r)]
            k = ker.shape[0]
            pad = k // 2
            msg = np.zeros((H, W))
            for y in range(H):
                for xx in range(W):
                    acc = biases[(v, r)]
                    for i in range(k):
                        for j in range(k):
                            yy, xc = y - pad + i, xx - pad + j
                            if 0 <= yy < H and 0 <= xc < W:
                                acc += ker[i, j] * q[v, yy, xc]
                    msg[y, xx] = acc
            prod = prod * msg
        out[r] = prod / prod.sum()
    return out
