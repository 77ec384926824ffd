import itertools

import numpy as np
import pytest

from panostitch.maxflow import BinaryCut


def _random_energy(rng, n, m):
    unary = rng.normal(size=(n, 2)) * 3
    pairs = []
    for _ in range(m):
        p, q = rng.choice(n, 2, replace=False)
        e00, e11 = rng.uniform(0, 2, 2)
        e01, e10 = rng.uniform(0, 3, 2)
        if e00 + e11 > e01 + e10:
            e01 += e00 + e11 - (e01 + e10)
        pairs.append((p, q, e00, e01, e10, e11))
    return unary, pairs


def _brute(n, unary, pairs):
    best = np.inf
    for x in itertools.product((0, 1), repeat=n):
        e = sum(unary[i, x[i]] for i in range(n))
        e += sum((e00, e01, e10, e11)[2 * x[p] + x[q]] for p, q, e00, e01, e10, e11 in pairs)
        best = min(best, e)
    return best


def test_matches_enumeration(rng):
    for _ in range(150):
        n = int(rng.integers(1, 9))
        unary, pairs = _random_energy(rng, n, int(rng.integers(0, 14)) if n > 1 else 0)
        cut = BinaryCut(n)
        cut.add_unary(np.arange(n), unary[:, 0], unary[:, 1])
        for p, q, *e in pairs:
            cut.add_pairwise([p], [q], *e)
        x, energy = cut.solve()
        direct = unary[np.arange(n), x.astype(int)].sum() + sum(
            (e00, e01, e10, e11)[2 * x[p] + x[q]] for p, q, e00, e01, e10, e11 in pairs)
        best = _brute(n, unary, pairs)
        assert energy == pytest.approx(best, abs=1e-9)
        assert direct == pytest.approx(best, abs=1e-9)


def test_rejects_non_submodular():
    cut = BinaryCut(2)
    with pytest.raises(ValueError):
        cut.add_pairwise([0], [1], 5.0, 0.0, 0.0, 5.0)


def test_grid_is_deterministic(rng):
    n = 30 * 30
    u = rng.normal(size=n)
    idx = np.arange(n).reshape(30, 30)
    runs = []
    for _ in range(2):
        cut = BinaryCut(n)
        cut.add_unary(np.arange(n), 0.0, u)
        cut.add_pairwise(idx[:, :-1].ravel(), idx[:, 1:].ravel(), 0, 0.4, 0.4, 0)
        cut.add_pairwise(idx[:-1].ravel(), idx[1:].ravel(), 0, 0.4, 0.4, 0)
        runs.append(cut.solve())
    assert np.array_equal(runs[0][0], runs[1][0]) and runs[0][1] == runs[1][1]
