"""Independent reference computations for the recurrent recommender tests."""
import math

import numpy as np

from trajsim.rnn import PARAMS


def unroll_reference(m, sequence):
    """Plain-Python step-by-step recurrence (no numpy matmul)."""
    Q, Wx, Wh, b, Wo = (m.Q.tolist(), m.W_xh.tolist(), m.W_hh.tolist(), m.b.tolist(), m.W_out.tolist())
    row = {int(item): r for r, item in enumerate(m.items.tolist())}
    H, D = len(b), len(Q[0])
    h = [0.0] * H
    for item in sequence:
        q = Q[row[item]]
        h = [math.tanh(sum(Wx[i][j] * q[j] for j in range(D))
                       + sum(Wh[i][j] * h[j] for j in range(H)) + b[i]) for i in range(H)]
    return np.array([sum(Wo[i][j] * h[j] for j in range(H)) for i in range(D)])


def loss_reference(params, x, y, mask, lam):
    """Objective evaluated sequence by sequence with the reference unroll."""
    Q, Wx, Wh, b, Wo = (params[k] for k in PARAMS)
    total, n = 0.0, 0
    for row in range(x.shape[0]):
        h = np.zeros(len(b))
        for t in range(x.shape[1] - 1):
            h = np.tanh(Wx @ Q[x[row, t]] + Wh @ h + b)
            if mask[row, t + 1]:
                total += (float((Wo @ h) @ Q[x[row, t + 1]]) - y[row, t + 1]) ** 2
                n += 1
    reg = sum(float(np.sum(params[k] ** 2)) for k in PARAMS)
    return total / max(n, 1) + lam * reg


def finite_difference_grad(params, x, y, mask, lam, eps=1e-5):
    grads = {}
    for k in PARAMS:
        g = np.zeros_like(params[k])
        it = np.nditer(params[k], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = {n: v.copy() for n, v in params.items()}
            minus = {n: v.copy() for n, v in params.items()}
            plus[k][idx] += eps
            minus[k][idx] -= eps
            g[idx] = (loss_reference(plus, x, y, mask, lam) - loss_reference(minus, x, y, mask, lam)) / (2 * eps)
        grads[k] = g
    return grads


def max_relative_error(analytic, numeric):
    """Per tensor: max |a - n| / max(max |a|, max |n|); worst tensor wins."""
    worst = 0.0
    for k in analytic:
        scale = max(np.max(np.abs(analytic[k])), np.max(np.abs(numeric[k])), 1e-12)
        worst = max(worst, float(np.max(np.abs(analytic[k] - numeric[k])) / scale))
    return worst
