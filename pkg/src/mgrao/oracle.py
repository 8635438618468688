"""Independent reference implementation of the learner maths.

Plain lists and ``math`` only, written straight from the definitions so it
shares no code path with :mod:`mgrao.learner`. Used by ``mgrao verify`` and
the test suite as the second route for every hand-derived value.
"""

import math


def norm(xs):
    s = sum(xs)
    if s == 0:
        return [0.0 for _ in xs]
    return [x / s for x in xs]


def softmax(xs):
    top = max(xs)
    es = [math.exp(x - top) for x in xs]
    s = sum(es)
    return [e / s for e in es]


def kl_from_uniform(row):
    n = len(row)
    total = 0.0
    for p in row:
        if p > 0:
            total += p * math.log(p / (1.0 / n))
    return total


def blend(counts, W):
    ent = norm([kl_from_uniform(row) for row in W])
    freq = norm([float(c) for c in counts])
    return [a + b for a, b in zip(ent, freq)]


def crw(B, W):
    bn = norm(B)
    n = len(W[0])
    mixed = [sum(bn[i] * W[i][j] for i in range(len(W))) for j in range(n)]
    return softmax(mixed)


def etu(E, idx, gamma):
    out = []
    for i, row in enumerate(E):
        new_row = []
        for j, e in enumerate(row):
            if (i, j) == idx:
                new_row.append(1.0)
            elif e > 0:
                new_row.append(gamma * e)
            else:
                new_row.append(0.0)
        out.append(new_row)
    return out


def update(W, E, idx, atv, alpha, gamma):
    """One pass of the update algorithm; returns (W, E)."""
    E = etu(E, idx, gamma)
    W = [[w + alpha * atv * e for w, e in zip(wr, er)] for wr, er in zip(W, E)]
    W = [norm(row) for row in W]
    return W, E


def weighting(j, W, counts, amount):
    C = crw(blend(counts, W), W)
    return C[j] * amount


def ctv(prefs):
    s = sum(prefs)
    return [p / s for p in prefs]


def taq(ctvs, qualities):
    return sum(c * q for c, q in zip(ctvs, qualities))


def quality(amount, demand):
    if amount <= 0:
        return 0.0
    return min(1.0, amount / demand)
