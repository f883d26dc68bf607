"""Pure-Python reference computations used as independent oracles in the tests."""

from __future__ import annotations

import math
from collections import deque

import numpy as np
import pytest

from usg.model.layers import Attention, Linear, MLP


def py_matmul(a, b):
    a, b = np.asarray(a).tolist(), np.asarray(b).tolist()
    return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def py_softmax(row):
    finite = [v for v in row if v != -math.inf]
    if not finite:
        return [1.0 / len(row)] * len(row)
    m = max(finite)
    e = [0.0 if v == -math.inf else math.exp(v - m) for v in row]
    s = sum(e)
    return [v / s for v in e]


def py_affine(x, lin: Linear):
    w, b = np.asarray(lin.weight).tolist(), np.asarray(lin.bias).tolist()[0]
    out = []
    for row in np.asarray(x).tolist():
        out.append([sum(row[t] * w[t][j] for t in range(len(w))) + b[j] for j in range(len(b))])
    return out


def py_cos(u, v):
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(a * a for a in v))
    if nu == 0 or nv == 0:
        return 0.0
    return sum(a * b for a, b in zip(u, v)) / (nu * nv)


def py_attention(x, y, att: Attention, mask=None):
    """softmax(mask + F_q(x) F_k(y)^T) F_v(y), entry by entry."""
    q, k, v = py_affine(x, att.q), py_affine(y, att.k), py_affine(y, att.v)
    out = []
    for i, qi in enumerate(q):
        logits = [sum(a * b for a, b in zip(qi, kj)) for kj in k]
        if mask is not None:
            logits = [l + float(mask[i][j]) for j, l in enumerate(logits)]
        w = py_softmax(logits)
        out.append([sum(w[j] * v[j][c] for j in range(len(v))) for c in range(len(v[0]))])
    return out


def py_mlp(x, mlp: MLP):
    h = [[max(0.0, a) for a in row] for row in py_affine(x, mlp.first)]
    return py_affine(h, mlp.second)


def py_sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def bfs_components(nodes, edges):
    """Connected components by breadth-first search over an undirected edge list."""
    adj = {n: set() for n in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, comps = set(), []
    for n in nodes:
        if n in seen:
            continue
        comp, queue = set(), deque([n])
        seen.add(n)
        while queue:
            u = queue.popleft()
            comp.add(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        comps.append(frozenset(comp))
    return comps


def random_linear(rng, d_in, d_out=None, scale=1.0):
    d_out = d_in if d_out is None else d_out
    return Linear(rng.normal(scale=scale, size=(d_in, d_out)), rng.normal(scale=scale, size=(1, d_out)))


def random_attention(rng, d, scale=0.5, zero_value=False):
    q, k = random_linear(rng, d, scale=scale), random_linear(rng, d, scale=scale)
    v = Linear.zeros(d) if zero_value else random_linear(rng, d, scale=scale)
    return Attention(q, k, v)


def random_mlp(rng, d, hidden=None, scale=0.5, zero_output=False):
    hidden = hidden or d
    second = Linear.zeros(hidden, d) if zero_output else random_linear(rng, hidden, d, scale=scale)
    return MLP(random_linear(rng, d, hidden, scale=scale), second)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
