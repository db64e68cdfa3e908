"""Independent brute-force reference implementations used as test oracles.

Everything here is written the slow, obvious way (scalar loops, direct
summation, O(N^2)/O(N^4) algorithms) and deliberately shares no code with the
library implementations it checks.
"""

import math

import numpy as np

# ---------------------------------------------------------------------------
# Geophysical model function: standalone transcription of the published
# 28-coefficient C-band VV neutral-wind table, evaluated scalar-by-scalar
# with math-module functions only.
# ---------------------------------------------------------------------------

_C = [
    0.0,
    -0.6878, -0.7957, 0.3380, -0.1728, 0.0000, 0.0040, 0.1103,
    0.0159, 6.7329, 2.7713, -2.2885, 0.4971, -0.7250, 0.0450,
    0.0066, 0.3222, 0.0120, 22.7000, 2.0813, 3.0000, 8.3659,
    -3.3428, 1.3236, 6.2437, 2.3893, 0.3249, 4.1590, 1.6930,
]


def cmod5n_reference(v, theta, phi):
    thetm, thethr, zpow = 40.0, 25.0, 1.6
    y0 = _C[19]
    pn = _C[20]
    a = y0 - (y0 - 1.0) / pn
    b = 1.0 / (pn * (y0 - 1.0) ** (pn - 1.0))

    fi = math.radians(phi % 360.0)
    csfi = math.cos(fi)
    cs2fi = 2.0 * csfi * csfi - 1.0

    x = (theta - thetm) / thethr
    xx = x * x
    a0 = _C[1] + _C[2] * x + _C[3] * xx + _C[4] * x * xx
    a1 = _C[5] + _C[6] * x
    a2 = _C[7] + _C[8] * x
    gam = _C[9] + _C[10] * x + _C[11] * xx
    s0 = _C[12] + _C[13] * x
    s = a2 * v
    if s < s0:
        a3 = 1.0 / (1.0 + math.exp(-s0))
        a3 = a3 * (s / s0) ** (s0 * (1.0 - a3))
    else:
        a3 = 1.0 / (1.0 + math.exp(-s))
    b0 = (a3 ** gam) * 10.0 ** (a0 + a1 * v)

    b1 = _C[15] * v * (0.5 + x - math.tanh(4.0 * (x + _C[16] + _C[17] * v)))
    b1 = (_C[14] * (1.0 + x) - b1) / (math.exp(0.34 * (v - 25.0)) + 1.0)

    v0 = _C[21] + _C[22] * x + _C[23] * xx
    d1 = _C[24] + _C[25] * x + _C[26] * xx
    d2 = _C[27] + _C[28] * x
    v2 = v / v0 + 1.0
    if v2 < y0:
        v2 = a + b * (v2 - 1.0) ** pn
    b2 = (-d1 + d2 * v2) * math.exp(-v2)

    return b0 * (1.0 + b1 * csfi + b2 * cs2fi) ** zpow


# ---------------------------------------------------------------------------
# Preprocessing oracles
# ---------------------------------------------------------------------------

def boxcar_reference(values, window):
    """Naive mean-then-stride: loop over every output cell, sum its window."""
    rows, cols = values.shape
    out_r, out_c = rows // window, cols // window
    out = np.empty((out_r, out_c), dtype=np.float64)
    for i in range(out_r):
        for j in range(out_c):
            block = values[i * window:(i + 1) * window, j * window:(j + 1) * window]
            out[i, j] = np.sum(block) / (window * window)
    return out


def percentile_reference(values, q):
    """Linear interpolation between order statistics of the flattened grid."""
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = flat.size
    h = (n - 1) * (q / 100.0)
    lo = int(math.floor(h))
    hi = min(lo + 1, n - 1)
    frac = h - lo
    return flat[lo] * (1.0 - frac) + flat[hi] * frac


def intensity_reference(values):
    """Percentile stretch applied pixel-by-pixel with explicit loops."""
    p01 = percentile_reference(values, 1.0)
    p99 = percentile_reference(values, 99.0)
    rows, cols = values.shape
    out = np.empty((rows, cols), dtype=np.uint8)
    for i in range(rows):
        for j in range(cols):
            y = 255.0 * (values[i, j] - p01) / (p99 - p01)
            y = math.floor(y + 0.5)
            out[i, j] = int(min(max(y, 0.0), 255.0))
    return out


# ---------------------------------------------------------------------------
# Direct 2-D discrete Fourier transform, O(N^4) multiplies. The matrix form
# builds the full N x N twiddle matrices and evaluates the definition by
# direct matrix products; the loop form below it is the same definition with
# scalar loops and validates the matrix form on tiny inputs.
# ---------------------------------------------------------------------------

def dft2_matrix(img):
    h, w = img.shape
    wu = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    wv = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return wu @ img.astype(complex) @ wv.T


def idft2_matrix(coeffs):
    h, w = coeffs.shape
    wu = np.exp(2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    wv = np.exp(2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return (wu @ coeffs @ wv.T) / (h * w)


def dft2_reference(img):
    h, w = img.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for m in range(h):
                for n in range(w):
                    acc += img[m, n] * np.exp(-2j * np.pi * (u * m / h + v * n / w))
            out[u, v] = acc
    return out


def idft2_reference(coeffs):
    h, w = coeffs.shape
    out = np.zeros((h, w), dtype=complex)
    for m in range(h):
        for n in range(w):
            acc = 0.0 + 0.0j
            for u in range(h):
                for v in range(w):
                    acc += coeffs[u, v] * np.exp(2j * np.pi * (u * m / h + v * n / w))
            out[m, n] = acc / (h * w)
    return out


# ---------------------------------------------------------------------------
# Contrastive loss: direct evaluation of the per-pair loss with scalar loops.
# Rows are ordered so that rows (2k, 2k+1) form a positive pair.
# ---------------------------------------------------------------------------

def _cos(u, v):
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def nt_xent_reference(z, tau):
    z = [list(map(float, row)) for row in np.asarray(z)]
    n2 = len(z)
    total = 0.0
    for i in range(n2):
        j = i + 1 if i % 2 == 0 else i - 1
        num = math.exp(_cos(z[i], z[j]) / tau)
        den = 0.0
        for k in range(n2):
            if k != i:
                den += math.exp(_cos(z[i], z[k]) / tau)
        total += -math.log(num / den)
    return total / n2


# ---------------------------------------------------------------------------
# Metric oracles
# ---------------------------------------------------------------------------

def auroc_pairwise_reference(labels, scores):
    """P(score+ > score-) + 0.5 * P(score+ == score-) over all pos/neg pairs."""
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def knn_scores_reference(train_emb, train_labels, query, k, tau):
    """Exhaustive-sort cosine kNN with similarity-weighted label averaging."""
    sims = []
    for row in train_emb:
        sims.append(_cos(list(map(float, query)), list(map(float, row))))
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))[:k]
    num = np.zeros(train_labels.shape[1])
    den = 0.0
    for i in order:
        w = math.exp(sims[i] / tau)
        num += w * train_labels[i]
        den += w
    return num / den


def average_precision_reference(relevance):
    """Mean of precision@i over the relevant ranks of a binary relevance list."""
    precisions = []
    hits = 0
    for rank, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return 0.0
    return sum(precisions) / len(precisions)
