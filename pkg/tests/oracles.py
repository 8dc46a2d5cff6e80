"""Independent reference implementations used to cross-check the package.

Everything here is written with plain scalar loops and ``math`` functions,
deliberately avoiding the vectorized code paths under test so agreement is
evidence of correctness rather than shared bugs.
"""

import math

import numpy as np


def gaze_mask_direct(samples, center, alpha, beta, gamma, k, dims):
    """Direct double-loop summation of the multimodal Gaussian mask.

    ``samples`` is a list of (x, y, valid) tuples (or None); the sample at
    index ``center`` is the frame the mask belongs to. Offsets j in
    [-k, k] contribute alpha^|j| * N((col,row); (x,y), gamma^2*beta^(-2|j|) I)
    evaluated at integer pixel coordinates.
    """
    h, w = dims
    field = [[0.0] * w for _ in range(h)]
    for idx, s in enumerate(samples):
        j = idx - center
        if abs(j) > k or s is None:
            continue
        x, y, valid = s
        if not valid:
            continue
        weight = alpha ** abs(j)
        var = gamma * gamma * beta ** (-2 * abs(j))
        norm = 1.0 / (2.0 * math.pi * var)
        for row in range(h):
            for col in range(w):
                d2 = (col - x) ** 2 + (row - y) ** 2
                field[row][col] += weight * norm * math.exp(-d2 / (2.0 * var))
    return np.array(field)


def conv2d_direct(x, kernels, stride=1, padding=0):
    """Quadruple-loop cross-correlation, the textbook definition."""
    n, cin, h, w = x.shape
    cout, cin2, kh, kw = kernels.shape
    assert cin == cin2
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding))
        xp[:, :, padding:padding + h, padding:padding + w] = x
        x = xp
        h, w = h + 2 * padding, w + 2 * padding
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for b in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for di in range(kh):
                            for dj in range(kw):
                                acc += x[b, ci, i * stride + di, j * stride + dj] \
                                    * kernels[co, ci, di, dj]
                    out[b, co, i, j] = acc
    return out


def softmax_direct(values):
    """Scalar-loop softmax over a flat list."""
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    s = sum(exps)
    return [e / s for e in exps]
