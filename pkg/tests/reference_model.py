"""Plain-loop reference for the depth model: no numpy in the arithmetic.

Deliberately slow and literal so it can serve as an oracle for the
vectorised implementation.
"""

import math


def matvec_T(W, x):
    # x (len n) times W (n x m) -> len m
    n, m = len(W), len(W[0])
    return [sum(x[i] * W[i][j] for i in range(n)) for j in range(m)]


def softmax(v):
    mx = max(v)
    e = [math.exp(a - mx) for a in v]
    s = sum(e)
    return [a / s for a in e]


def attention(W_a, b_a, W_c, y):
    d = len(y)
    z = []
    for i in range(d):
        acc = b_a[i]
        for k in range(d):
            acc += W_a[i][k] * y[k]
        z.append(math.tanh(acc))
    s = []
    for j in range(d):
        acc = 0.0
        for i in range(d):
            acc += W_c[i][j] * z[i]
        s.append(acc)
    w = softmax(s)
    return [w[i] * y[i] for i in range(d)]


def forward(params, x, ablate_intra=False):
    t = {k: v.tolist() for k, v in params.tensors.items()}
    mean, std = params.feature_mean.tolist(), params.feature_std.tolist()
    z = [(x[i] - mean[i]) / std[i] for i in range(len(x))]
    cols = {"rotation": (0, 6), "position": (6, 12), "intersection": (12, 15)}
    concat = []
    for name, (a, b) in cols.items():
        h = matvec_T(t[f"embed.{name}.W"], z[a:b])
        y = [max(h[j] + t[f"embed.{name}.b"][j], 0.0) for j in range(len(h))]
        if not ablate_intra:
            y = attention(t[f"intra.{name}.W_a"], t[f"intra.{name}.b_a"],
                          t[f"intra.{name}.W_c"], y)
        concat.extend(y)
    a = attention(t["inter.W_a"], t["inter.b_a"], t["inter.W_c"], concat)
    logits = matvec_T(t["head.W"], a)
    logits = [logits[j] + t["head.b"][j] for j in range(len(logits))]
    return softmax(logits)
