"""Independent reference implementations used only by the tests.

These are written with plain Python loops (or a different library) so they
share no code path with the package under test.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def sinkhorn_loops(scores, eps, niters):
    """Fixed-point Sinkhorn scaling on nested lists; returns B x K codes with unit rows."""
    b = len(scores)
    k = len(scores[0])
    q = [[math.exp(scores[i][j] / eps) for i in range(b)] for j in range(k)]
    tot = sum(sum(row) for row in q)
    q = [[v / tot for v in row] for row in q]
    for _ in range(niters):
        for j in range(k):
            u = sum(q[j])
            q[j] = [v / (k * u) for v in q[j]]
        for i in range(b):
            col = sum(q[j][i] for j in range(k))
            for j in range(k):
                q[j][i] /= b * col
    out = []
    for i in range(b):
        col = sum(q[j][i] for j in range(k))
        out.append([q[j][i] / col for j in range(k)])
    return out


def kmeans_brute_force(points, k):
    """Best spherical k-means objective over every labelling (exponential)."""
    d = len(points[0])
    best = -math.inf
    best_labels = None
    for labels in itertools.product(range(k), repeat=len(points)):
        total = 0.0
        for c in range(k):
            s = [0.0] * d
            for p, lab in zip(points, labels):
                if lab == c:
                    s = [a + b for a, b in zip(s, p)]
            total += math.sqrt(sum(v * v for v in s))
        if total > best + 1e-12:
            best, best_labels = total, labels
    return best, best_labels


def simclr_two_view_scalar(z1, z2, tau):
    """Two-view NT-Xent with the positive kept in the denominator, from scalar loops."""
    emb = list(z1) + list(z2)
    n = len(emb)
    b = len(z1)
    dot = lambda a, c: sum(x * y for x, y in zip(a, c))  # noqa: E731
    total = 0.0
    for i in range(n):
        p = (i + b) % n
        pos = math.exp(dot(emb[i], emb[p]) / tau)
        neg = sum(math.exp(dot(emb[i], emb[j]) / tau) for j in range(n) if j % b != i % b)
        total += -math.log(pos / (pos + neg))
    return total / n


def central_differences(f, arrays, h=1e-5):
    """Numerical gradient of scalar ``f()`` with respect to each array, perturbed in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + h
            up = f()
            a[idx] = old - h
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def five_point_differences(f, arrays, h=1e-3):
    """Fourth-order stencil ``(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h``; far less
    rounding noise than the two-point rule on entries whose gradient is tiny."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            vals = []
            for step in (2, 1, -1, -2):
                a[idx] = old + step * h
                vals.append(f())
            a[idx] = old
            g[idx] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries of all arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a)
        n = np.asarray(n)
        den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / den)))
    return worst
