"""Minimum s-t cut on graphs with real-valued capacities (Dinic's algorithm).

Binary energies are added term by term with :meth:`BinaryCut.add_unary` and
:meth:`BinaryCut.add_pairwise`; :meth:`BinaryCut.solve` returns the
minimising 0/1 assignment. Only submodular pairwise terms are accepted.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _dinic(n, tail, head, cap, s, t, eps):
    m = tail.shape[0]
    counts = np.zeros(n + 1, np.int64)
    for e in range(m):
        counts[tail[e] + 1] += 1
    start = np.cumsum(counts)
    adj = np.empty(m, np.int64)
    fill = start[:-1].copy()
    for e in range(m):
        adj[fill[tail[e]]] = e
        fill[tail[e]] += 1

    level = np.empty(n, np.int64)
    it = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    path = np.empty(n, np.int64)
    flow = 0.0
    while True:
        level[:] = -1
        level[s] = 0
        qh, qt = 0, 1
        queue[0] = s
        while qh < qt:
            u = queue[qh]
            qh += 1
            for k in range(start[u], start[u + 1]):
                e = adj[k]
                v = head[e]
                if cap[e] > eps and level[v] < 0:
                    level[v] = level[u] + 1
                    queue[qt] = v
                    qt += 1
        if level[t] < 0:
            break
        for u in range(n):
            it[u] = start[u]
        depth = 0
        u = s
        while True:
            if u == t:
                f = np.inf
                for k in range(depth):
                    f = min(f, cap[path[k]])
                for k in range(depth):
                    e = path[k]
                    cap[e] -= f
                    cap[e ^ 1] += f
                flow += f
                depth = 0
                u = s
                continue
            advanced = False
            while it[u] < start[u + 1]:
                e = adj[it[u]]
                v = head[e]
                if cap[e] > eps and level[v] == level[u] + 1:
                    path[depth] = e
                    depth += 1
                    u = v
                    advanced = True
                    break
                it[u] += 1
            if not advanced:
                if u == s:
                    break
                level[u] = -1
                depth -= 1
                u = tail[path[depth]]
                it[u] += 1
    reachable = level >= 0
    return flow, reachable


class BinaryCut:
    """Accumulates a binary energy over ``n`` variables and minimises it by max-flow."""

    def __init__(self, n: int):
        self.n = n
        self.unary = np.zeros(n)  # cost of x=1 minus cost of x=0
        self.constant = 0.0
        self._p = []
        self._q = []
        self._w = []

    def add_unary(self, idx, cost0, cost1):
        idx = np.asarray(idx, np.int64)
        cost0 = np.broadcast_to(np.asarray(cost0, float), idx.shape)
        cost1 = np.broadcast_to(np.asarray(cost1, float), idx.shape)
        np.add.at(self.unary, idx, cost1 - cost0)
        self.constant += float(cost0.sum())

    def add_pairwise(self, p, q, e00, e01, e10, e11):
        """Add ``E(x_p, x_q)`` given its four values; requires ``e00 + e11 <= e01 + e10``."""
        p = np.asarray(p, np.int64)
        q = np.asarray(q, np.int64)
        e00, e01, e10, e11 = (np.broadcast_to(np.asarray(a, float), p.shape)
                              for a in (e00, e01, e10, e11))
        w = e01 + e10 - e00 - e11
        if np.any(w < -1e-9 * (1.0 + np.abs(e00))):
            raise ValueError("non-submodular pairwise term")
        self.constant += float(e00.sum())
        np.add.at(self.unary, p, e10 - e00)
        np.add.at(self.unary, q, e11 - e10)
        self._p.append(p)
        self._q.append(q)
        self._w.append(np.maximum(w, 0.0))

    def solve(self):
        """Return ``(x, energy)`` with ``x`` a bool array (True = label 1)."""
        n = self.n
        s, t = n, n + 1
        nodes = np.arange(n, dtype=np.int64)
        pos = self.unary > 0
        neg = self.unary < 0
        tails = [nodes[pos], nodes[neg]]
        heads = [np.full(pos.sum(), s, np.int64), np.full(neg.sum(), t, np.int64)]
        caps = [self.unary[pos], -self.unary[neg]]
        # source edges run s -> p
        tails[0], heads[0] = heads[0], tails[0]
        if self._p:
            tails.append(np.concatenate(self._p))
            heads.append(np.concatenate(self._q))
            caps.append(np.concatenate(self._w))
        tail = np.concatenate(tails)
        head = np.concatenate(heads)
        cap = np.concatenate(caps)
        keep = cap > 0
        tail, head, cap = tail[keep], head[keep], cap[keep]
        m = tail.shape[0]
        T = np.empty(2 * m, np.int64)
        Hd = np.empty(2 * m, np.int64)
        C = np.zeros(2 * m)
        T[0::2], Hd[0::2], C[0::2] = tail, head, cap
        T[1::2], Hd[1::2] = head, tail
        eps = 1e-13 * (float(cap.max()) if m else 1.0)
        flow, reach = _dinic(n + 2, T, Hd, C, s, t, eps)
        x = ~reach[:n]
        return x, self.constant + np.minimum(self.unary, 0).sum() + flow
