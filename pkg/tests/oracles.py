"""Independent reference computations used by the tests.

Nothing here imports from ``mipbpe``; each oracle follows the textbook
definition as directly as possible.
"""

import math
from fractions import Fraction


def average_ranks(values):
    """O(n^2) average rank: 1 + (#smaller) + (#equal - 1) / 2."""
    out = []
    for v in values:
        smaller = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(Fraction(2 * smaller + equal + 1, 2))
    return out


def spearman_bruteforce(a, b):
    """Rank, then Pearson, in exact rationals up to the final square root."""
    ra, rb = average_ranks(a), average_ranks(b)
    n = len(ra)
    ma, mb = sum(ra) / n, sum(rb) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    va = sum((x - ma) ** 2 for x in ra)
    vb = sum((y - mb) ** 2 for y in rb)
    prod = va * vb
    num, den = prod.numerator, prod.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return cov / Fraction(rn, rd)
    return float(cov) / math.sqrt(float(prod))


def spearman_shortcut(a, b):
    """1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties."""
    ra, rb = average_ranks(a), average_ranks(b)
    n = len(a)
    d2 = sum((x - y) ** 2 for x, y in zip(ra, rb))
    return 1 - Fraction(6) * d2 / (n * (n * n - 1))


def variance(ys):
    m = sum(ys) / len(ys)
    return sum((y - m) ** 2 for y in ys) / len(ys)


def best_split_bruteforce(X, y, min_leaf=1, tol=1e-12):
    """Enumerate every (dim, midpoint) and pick the minimum weighted variance.

    Near-equal impurities (within ``tol``) are ties, resolved by lower dim
    then lower threshold.
    """
    n, d = len(X), len(X[0])
    cands = []
    for dim in range(d):
        vals = sorted(set(row[dim] for row in X))
        for lo, hi in zip(vals, vals[1:]):
            t = (lo + hi) / 2
            left = [y[i] for i in range(n) if X[i][dim] <= t]
            right = [y[i] for i in range(n) if X[i][dim] > t]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            g = (len(left) * variance(left) + len(right) * variance(right)) / n
            cands.append((g, dim, t))
    if not cands:
        return None
    gmin = min(c[0] for c in cands)
    tied = [c for c in cands if c[0] <= gmin + tol * max(1.0, abs(gmin))]
    _, dim, t = min(tied, key=lambda c: (c[1], c[2]))
    return dim, t


def softmax_neg_normalized(costs):
    lo, hi = min(costs), max(costs)
    scaled = [(c - lo) / (hi - lo) if hi > lo else 0.0 for c in costs]
    w = [math.exp(-s) for s in scaled]
    return [x / sum(w) for x in w]
