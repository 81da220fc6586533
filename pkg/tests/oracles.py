"""Independent reference implementations used by the tests.

Nothing here imports the graph or simulation code under test.
"""
import itertools
import math

import numpy as np

from dynograph.influence import InfluenceGraph


def iter_simple_paths(nodes, edges, src, dst):
    """Yield every simple directed path src -> dst, by depth-first enumeration."""
    succ = {n: sorted(b for a, b in edges if a == n) for n in nodes}

    def go(path):
        last = path[-1]
        if last == dst:
            yield tuple(path)
            return
        for nxt in succ[last]:
            if nxt not in path:
                yield from go(path + [nxt])

    yield from go([src])


def simple_paths(nodes, edges, src, dst):
    return list(iter_simple_paths(nodes, edges, src, dst))


def _has_path(nodes, edges, src, dst):
    return next(iter_simple_paths(nodes, edges, src, dst), None) is not None


def brute_influence(nodes, edges, j, k):
    return _has_path(nodes, edges, j, k)


def brute_blocks(nodes, edges, blockers, l, k):
    return all(any(n in blockers for n in p[1:-1])
               for p in iter_simple_paths(nodes, edges, l, k))


def brute_dynindep(nodes, edges, j, k):
    if _has_path(nodes, edges, j, k) or _has_path(nodes, edges, k, j):
        return False
    for w in nodes:
        if w in (j, k):
            continue
        if _has_path(nodes, edges, w, j) and _has_path(nodes, edges, w, k):
            return False
    return True


def brute_scli_literal(nodes, edges, j, k):
    if (j, k) in edges:
        return False
    return not any((j, d) in edges and (d, k) in edges for d in nodes)


def random_graph(rng, max_nodes=8, p=None):
    n = int(rng.integers(2, max_nodes + 1))
    nodes = tuple(f"N{i}" for i in range(n))
    p = rng.uniform(0.1, 0.5) if p is None else p
    edges = frozenset((a, b) for a, b in itertools.permutations(nodes, 2) if rng.random() < p)
    return InfluenceGraph(nodes, edges)


def ou_moments(theta, sigma, x0, t):
    """Mean and variance of dX = -theta X dt + sigma dW at time t."""
    mean = x0 * math.exp(-theta * t)
    var = sigma**2 * (1 - math.exp(-2 * theta * t)) / (2 * theta)
    return mean, var


def variance_se(x):
    """Standard error of the sample variance (fourth-moment estimate)."""
    x = np.asarray(x)
    n = len(x)
    c = x - x.mean()
    m4 = np.mean(c**4)
    s2 = np.var(x, ddof=1)
    return math.sqrt(max(m4 - s2**2 * (n - 3) / (n - 1), 0.0) / n)


def normal_sf(x):
    return 0.5 * math.erfc(x / math.sqrt(2))
