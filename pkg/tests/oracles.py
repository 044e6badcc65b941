"""Loop-transcribed reference computations, kept deliberately naive.

These mirror the loss definitions with explicit Python loops and no shared
code with the production implementations; the tests assert the two agree.
"""

import math

import numpy as np


def cosine_oracle(u, v, epsilon=1e-8):
    num = sum(float(a) * float(b) for a, b in zip(u, v))
    nu = math.sqrt(sum(float(a) ** 2 for a in u))
    nv = math.sqrt(sum(float(b) ** 2 for b in v))
    return num / max(nu * nv, epsilon)


def nt_xent_pair_oracle(vectors, i, j, tau, epsilon=1e-8):
    """Direct summation of the contrastive pair term."""
    n2 = len(vectors)
    num = math.exp(cosine_oracle(vectors[i], vectors[j], epsilon) / tau)
    den = 0.0
    for k in range(n2):
        if k == i:
            continue
        den += math.exp(cosine_oracle(vectors[i], vectors[k], epsilon) / tau)
    return -math.log(num / den)


def nt_xent_batch_oracle(vectors, tau, epsilon=1e-8):
    """Mean over ordered consecutive pairs (2i, 2i+1) and (2i+1, 2i)."""
    n2 = len(vectors)
    total = 0.0
    for p in range(n2 // 2):
        a, b = 2 * p, 2 * p + 1
        total += nt_xent_pair_oracle(vectors, a, b, tau, epsilon)
        total += nt_xent_pair_oracle(vectors, b, a, tau, epsilon)
    return total / n2


def jigsaw_oracle(probs, positions):
    total = 0.0
    for s, pos in enumerate(positions):
        total -= math.log(probs[s][pos])
    return total


def inpaint_oracle(pred, target, mask=None, region="full"):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    total = 0.0
    count = 0
    c, h, w = pred.shape
    for ci in range(c):
        for yi in range(h):
            for xi in range(w):
                if region == "masked" and not mask[yi][xi]:
                    continue
                total += (pred[ci, yi, xi] - target[ci, yi, xi]) ** 2
                count += 1
    return total / count


def grid_cells_oracle(pixels, m, n):
    """Row-major patch grid of a (C,H,W) array, gap 0."""
    c, h, w = pixels.shape
    ch, cw = h // m, w // n
    return [pixels[:, i * ch : (i + 1) * ch, j * cw : (j + 1) * cw] for i in range(m) for j in range(n)]
