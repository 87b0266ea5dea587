"""Straight-line numpy re-implementations used as test oracles.

These are written with explicit loops and float64 arithmetic and share no
code with the package.
"""
import math

import numpy as np


def log_softmax_row(row):
    m = max(row)
    s = sum(math.exp(v - m) for v in row)
    return [v - m - math.log(s) for v in row]


def softmax_row(row):
    return [math.exp(v) for v in log_softmax_row(row)]


def info_nce(q, k, W=None, tau=1.0):
    n = len(q)
    total = 0.0
    for i in range(n):
        logits = []
        for j in range(n):
            if W is None:
                logits.append(float(np.dot(q[i], k[j])) / tau)
            else:
                s = 0.0
                for a in range(len(q[i])):
                    for b in range(len(k[j])):
                        s += q[i][a] * W[a][b] * k[j][b]
                logits.append(s)
        total -= log_softmax_row(logits)[i]
    return total / n


def _unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v]


def byol(p1, z2, p1s, z2s):
    def term(p, z):
        acc = 0.0
        for i in range(len(p)):
            pu, zu = _unit(p[i]), _unit(z[i])
            acc += sum((a - b) ** 2 for a, b in zip(pu, zu))
        return acc / len(p)
    return 0.5 * (term(p1, z2) + term(p1s, z2s))


def simsiam(h, hs, z, zs):
    def negcos(a, b):
        acc = 0.0
        for i in range(len(a)):
            acc -= sum(x * y for x, y in zip(_unit(a[i]), _unit(b[i])))
        return acc / len(a)
    return 0.5 * (negcos(h, zs) + negcos(hs, z))


def dino(s1, s2, t1, t2, center, tau_s, tau_t, m_c):
    def ce(s, t):
        acc = 0.0
        for i in range(len(s)):
            pt = softmax_row([(t[i][k] - center[k]) / tau_t for k in range(len(center))])
            ls = log_softmax_row([v / tau_s for v in s[i]])
            acc -= sum(a * b for a, b in zip(pt, ls))
        return acc / len(s)
    loss = 0.5 * (ce(s1, t2) + ce(s2, t1))
    rows = list(t1) + list(t2)
    mean = [sum(r[k] for r in rows) / len(rows) for k in range(len(center))]
    new_c = [m_c * c + (1 - m_c) * m for c, m in zip(center, mean)]
    return loss, new_c


def cross_entropy(logits, labels):
    return -sum(log_softmax_row(list(row))[int(y)] for row, y in zip(logits, labels)) / len(labels)


def bce_with_logits(logits, labels):
    acc = 0.0
    for x, y in zip(np.ravel(logits), np.ravel(labels)):
        p = 1.0 / (1.0 + math.exp(-x))
        acc -= y * math.log(p) + (1 - y) * math.log(1 - p)
    return acc / len(np.ravel(labels))


def rot90_ccw(img):
    """Rotate an HxW array 90 degrees counter-clockwise, element by element."""
    h, w = len(img), len(img[0])
    out = [[None] * h for _ in range(w)]
    for r in range(h):
        for c in range(w):
            out[w - 1 - c][r] = img[r][c]
    return out


def rae(recon, target, z, params, lz, lt):
    n, c, h, w = recon.shape
    se = 0.0
    for i in range(n):
        for ch in range(c):
            for r in range(h):
                for col in range(w):
                    se += (recon[i, ch, r, col] - target[i, ch, r, col]) ** 2
    mse = se / (n * c * h * w)
    latent = sum(sum(v * v for v in row) for row in z) / len(z)
    weights = sum(float((p**2).sum()) for p in params)
    return mse + lz * latent + lt * weights


def mae(recon, target, mask, z, params, lz, lt):
    n, c, h, w = recon.shape
    se, cnt = 0.0, 0
    for i in range(n):
        for ch in range(c):
            for r in range(h):
                for col in range(w):
                    if mask[i, r, col]:
                        se += (recon[i, ch, r, col] - target[i, ch, r, col]) ** 2
                        cnt += 1
    latent = sum(sum(v * v for v in row) for row in z) / len(z)
    weights = sum(float((p**2).sum()) for p in params)
    return se / cnt + lz * latent + lt * weights


def mse_pooled(preds, targets):
    """Mean squared error over the concatenation of several (N, d_k) blocks."""
    se, cnt = 0.0, 0
    for p, t in zip(preds, targets):
        for row_p, row_t in zip(p, t):
            for a, b in zip(row_p, row_t):
                se += (a - b) ** 2
                cnt += 1
    return se / cnt


def dynamic_awareness(phi, phi_next, j):
    rand = sum(math.dist(phi[i], phi[j[i]]) for i in range(len(phi)))
    temp = sum(math.dist(phi[i], phi_next[i]) for i in range(len(phi)))
    return (rand - temp) / rand


def diversity(phi, values, eps=1e-2):
    n = len(phi)
    ds = [[math.dist(phi[i], phi[j]) for j in range(n)] for i in range(n)]
    dv = [[abs(values[i] - values[j]) for j in range(n)] for i in range(n)]
    ms = max(max(r) for r in ds)
    mv = max(max(r) for r in dv)
    total = 0.0
    for i in range(n):
        for j in range(n):
            s = ds[i][j] / ms if ms > 0 else 0.0
            v = dv[i][j] / mv if mv > 0 else 0.0
            total += min(v / (s + eps), 1.0)
    return 1.0 - total / n**2


def orthogonality(phi):
    n = len(phi)
    acc = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dot = sum(a * b for a, b in zip(phi[i], phi[j]))
            acc += abs(dot) / (math.sqrt(sum(a * a for a in phi[i])) * math.sqrt(sum(b * b for b in phi[j])))
    return 1.0 - 2.0 / (n * (n - 1)) * acc


def central_diff_grad(f, x, h=1e-6):
    """Numerical gradient of scalar ``f`` w.r.t. a float64 numpy array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
