"""Slow, loop-based reference implementations used as test oracles."""
import math


def dominance_oracle(pool):
    m1, d = len(pool), len(pool[0])
    out = []
    for i in range(m1):
        c = 0
        for j in range(m1):
            if all(pool[j][k] <= pool[i][k] for k in range(d)):
                c += 1
        out.append(c)
    return out


def dim_ranks_oracle(pool):
    """Per-dimension ranks by sorting; assumes no ties."""
    m1, d = len(pool), len(pool[0])
    ranks = [[0] * d for _ in range(m1)]
    for k in range(d):
        order = sorted(range(m1), key=lambda i: pool[i][k])
        for r, i in enumerate(order, start=1):
            ranks[i][k] = r
    return ranks


def average_rank_oracle(pool):
    return [sum(r) / len(r) for r in dim_ranks_oracle(pool)]


def band_depth_oracle(pool):
    m1 = len(pool)
    return [sum((m1 - r) * (r - 1) for r in row) / len(row) for row in dim_ranks_oracle(pool)]


def _dist(a, b):
    return math.sqrt(math.fsum((x - y) ** 2 for x, y in zip(a, b)))


def energy_oracle(pool):
    m1 = len(pool)
    m = m1 - 1
    out = []
    for i in range(m1):
        others = [pool[j] for j in range(m1) if j != i]
        first = math.fsum(_dist(pool[i], x) for x in others) / m
        second = math.fsum(_dist(a, b) for a in others for b in others) / (2 * m * m)
        out.append(first - second)
    return out


def dependence_oracle(v, h):
    d = len(v)
    gamma = math.fsum((v[i + h] - v[i]) ** 2 for i in range(d - h)) / (2 * (d - h))
    mean = math.fsum(v) / d
    s2 = math.fsum((x - mean) ** 2 for x in v) / d
    return 0.0 if s2 == 0 else -gamma / s2


def variogram_oracle(field, lag):
    """All-pairs scan over grid points separated by exactly ``lag``."""
    p, q = len(field), len(field[0])
    a, b = lag
    terms = []
    for i in range(p):
        for j in range(q):
            for k in range(p):
                for l in range(q):
                    if k - i == a and l - j == b:
                        terms.append((field[k][l] - field[i][j]) ** 2)
    return math.fsum(terms) / (2 * len(terms))


def isotropy_oracle(field, h):
    def term(g1, g2):
        return 0.0 if g1 + g2 == 0 else ((g1 - g2) / (g1 + g2)) ** 2

    g = {lag: variogram_oracle(field, lag) for lag in ((h, 0), (0, h), (h, h), (-h, h))}
    return -(term(g[(h, 0)], g[(0, h)]) + term(g[(h, h)], g[(-h, h)]))


def rel_err(a, b):
    return abs(a - b) / max(abs(b), 1e-300) if b != 0 else abs(a)
