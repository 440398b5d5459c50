"""Independent reference implementations used as test oracles.

Everything here is written with plain loops / the standard library on purpose,
so it shares no code with the package under test.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from mlvc import tensor as T


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += float(a[i, p]) * float(b[p, j])
            out[i, j] = s
    return out


def naive_conv3d(x, kernels, stride):
    c, t, h, w = x.shape
    k, kc, kt, kh, kw = kernels.shape
    st, sh, sw = stride
    to, ho, wo = (t - kt) // st + 1, (h - kh) // sh + 1, (w - kw) // sw + 1
    out = np.zeros((k, to, ho, wo))
    for o in range(k):
        for i in range(to):
            for j in range(ho):
                for m in range(wo):
                    s = 0.0
                    for ch in range(c):
                        for a in range(kt):
                            for b in range(kh):
                                for d in range(kw):
                                    s += x[ch, i * st + a, j * sh + b, m * sw + d] * kernels[o, ch, a, b, d]
                    out[o, i, j, m] = s
    return out


def gelu_erf(x: float) -> float:
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def gradcheck(fn, inputs, step: float = 1e-5, seed: int = 0):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps float64 Tensors to a Tensor; a fixed random projection turns
    non-scalar outputs into a scalar so every output element is exercised.
    """
    tensors = [T.Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    loss = T.tsum(T.mul(out, T.Tensor(proj)))
    loss.backward()
    worst = 0.0
    for idx, t in enumerate(tensors):
        analytic = t.grad
        numeric = np.zeros_like(t.data)
        for pos in np.ndindex(t.shape):
            orig = t.data[pos]
            vals = []
            for delta in (step, -step):
                probe = [np.array(x.data, copy=True) for x in tensors]
                probe[idx][pos] = orig + delta
                with T.no_grad():
                    y = fn(*[T.Tensor(p) for p in probe]).data
                vals.append(float((y * proj).sum()))
            numeric[pos] = (vals[0] - vals[1]) / (2 * step)
        scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3)
        worst = max(worst, float((np.abs(analytic - numeric) / scale).max()))
    return worst


# multi-label set metrics, one instance at a time with Python sets
def _instance_terms(y: frozenset, p: frozenset):
    inter, union = len(y & p), len(y | p)
    if not y and not p:
        return 1.0, 1.0, 1.0, 1.0, True
    acc = inter / union
    prec = inter / len(p) if p else 0.0
    rec = inter / len(y) if y else 0.0
    f1 = 2 * inter / (len(y) + len(p))
    return acc, prec, rec, f1, (not p or not y)


def brute_force_metrics(truths, preds):
    terms = [_instance_terms(frozenset(y), frozenset(p)) for y, p in zip(truths, preds)]
    n = len(terms)
    return (sum(t[0] for t in terms) / n, sum(t[1] for t in terms) / n,
            sum(t[2] for t in terms) / n, sum(t[3] for t in terms) / n, sum(1 for t in terms if t[4]))


def all_label_sets(n_labels: int):
    return [frozenset(c) for r in range(n_labels + 1) for c in itertools.combinations(range(n_labels), r)]


def to_bits(s, n_labels: int):
    return [1 if i in s else 0 for i in range(n_labels)]


# image quality, pixel by pixel
def _srgb_to_lab_pixel(r, g, b):
    def lin(c):
        c /= 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    x = (0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl) / 0.95047
    y = (0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl) / 1.0
    z = (0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl) / 1.08883

    def f(t):
        return t ** (1 / 3) if t > 216 / 24389 else (24389 / 27 * t + 16) / 116

    return 116 * f(y) - 16, 500 * (f(x) - f(y)), 200 * (f(y) - f(z))


def _percentile(values, q):
    """Linear-interpolation percentile (same convention as numpy's default)."""
    v = sorted(values)
    pos = (len(v) - 1) * q / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def naive_uciqe(img):
    h, w, _ = img.shape
    chromas, lums, sats = [], [], []
    for i in range(h):
        for j in range(w):
            r, g, b = (float(v) for v in img[i, j])
            L, a, bb = _srgb_to_lab_pixel(r, g, b)
            chromas.append(math.sqrt(a * a + bb * bb) / 100.0)
            lums.append(L)
            mx, mn = max(r, g, b) / 255.0, min(r, g, b) / 255.0
            sats.append((mx - mn) / mx if mx > 0 else 0.0)
    n = len(chromas)
    mu = sum(chromas) / n
    sigma = math.sqrt(sum((c - mu) ** 2 for c in chromas) / n)
    con = (_percentile(lums, 99) - _percentile(lums, 1)) / 100.0
    return 0.4680 * sigma + 0.2745 * con + 0.2576 * (sum(sats) / n)


def _trimmed(values, alpha=0.1):
    v = sorted(values)
    k = len(v)
    t = int(math.floor(alpha * k))
    kept = v[t:k - t]
    mu = sum(kept) / len(kept)
    return mu, sum((x - mu) ** 2 for x in kept) / len(kept)


def naive_uicm(img):
    rg, yb = [], []
    for row in img.astype(float):
        for r, g, b in row:
            rg.append(r - g)
            yb.append((r + g) / 2 - b)
    mrg, vrg = _trimmed(rg)
    myb, vyb = _trimmed(yb)
    return -0.0268 * math.sqrt(mrg ** 2 + myb ** 2) + 0.1586 * math.sqrt(vrg + vyb)


def _reflect(i, n):
    # scipy "reflect": (d c b a | a b c d | d c b a)
    if i < 0:
        return -i - 1
    if i >= n:
        return 2 * n - i - 1
    return i


def naive_sobel(plane):
    h, w = plane.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            p = lambda di, dj: float(plane[_reflect(i + di, h), _reflect(j + dj, w)])  # noqa: E731
            gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1))
            gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1))
            out[i, j] = math.sqrt(gx * gx + gy * gy)
    return out


def _block_extrema(plane, size=8):
    h, w = plane.shape
    for bi in range(h // size):
        for bj in range(w // size):
            vals = [float(plane[bi * size + a, bj * size + b]) for a in range(size) for b in range(size)]
            yield max(vals), min(vals)


def naive_eme(plane, size=8):
    total, k = 0.0, 0
    for mx, mn in _block_extrema(plane, size):
        k += 1
        mx = mx if mx != 0 else 1.0
        mn = mn if mn != 0 else 1.0
        total += math.log(mx / mn)
    return 2.0 / k * total


def naive_uism(img):
    return sum(w * naive_eme(naive_sobel(img[..., c].astype(float)))
               for c, w in enumerate((0.299, 0.587, 0.114)))


def naive_uiconm(img):
    f = img.astype(float)
    plane = 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]
    total, k = 0.0, 0
    for mx, mn in _block_extrema(plane):
        k += 1
        if mx + mn > 0 and mx > mn:
            m = (mx - mn) / (mx + mn)
            total += m * math.log(m)
    return total / k


def naive_uiqm(img):
    return 0.0282 * naive_uicm(img) + 0.2953 * naive_uism(img) + 3.5753 * naive_uiconm(img)


def naive_pearson(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def pairwise_dedup(vectors, threshold):
    """Greedy first-occurrence dedup from an explicit full similarity matrix."""
    n = len(vectors)
    sim = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            a, b = vectors[i], vectors[j]
            na = math.sqrt(sum(v * v for v in a))
            nb = math.sqrt(sum(v * v for v in b))
            sim[i][j] = 0.0 if na == 0 or nb == 0 else sum(x * y for x, y in zip(a, b)) / (na * nb)
    kept = []
    for i in range(n):
        if all(sim[i][k] <= threshold for k in kept):
            kept.append(i)
    return kept
