"""Random small mixed-binary programs used to cross-check the solvers."""
from __future__ import annotations

import numpy as np

from .milp import MILPData


def random_milp(rng: np.random.Generator, max_binaries: int = 14,
                max_continuous: int = 60) -> MILPData:
    """A bounded program with one-hot groups, linking rows and covering rows.

    One-hot groups keep the enumeration small; indicator-style linking rows
    ``x <= U y`` mimic the gated structure of the decision model.
    """
    nb = int(rng.integers(2, max_binaries + 1))
    nc = int(rng.integers(1, max_continuous + 1))
    n = nb + nc
    is_bin = np.zeros(n, dtype=bool)
    is_bin[:nb] = True
    lb = np.zeros(n)
    ub = np.ones(n)
    ub[nb:] = rng.uniform(1.0, 10.0, nc).round(2)
    # a few continuous variables may go negative
    neg = rng.random(nc) < 0.2
    lb[nb:][neg] = -rng.uniform(0.0, 5.0, neg.sum()).round(2)

    rows, senses, rhs = [], [], []

    def row(coefs, sense, b):
        r = np.zeros(n)
        for k, v in coefs:
            r[k] += v
        rows.append(r)
        senses.append(sense)
        rhs.append(float(b))

    # one-hot or at-most-one groups over the binaries
    perm = rng.permutation(nb)
    cuts = np.sort(rng.choice(np.arange(1, nb), size=min(nb - 1, max(0, nb // 3 - 1)),
                              replace=False)) if nb > 2 else np.array([], dtype=int)
    for group in np.split(perm, cuts):
        if group.size >= 2 or rng.random() < 0.5:
            row([(int(g), 1.0) for g in group], "=" if rng.random() < 0.6 else "<=", 1.0)

    # linking: a continuous variable is forced to zero unless its binary is on
    for k in range(nb, n):
        if rng.random() < 0.5:
            b = int(rng.integers(0, nb))
            row([(k, 1.0), (b, -ub[k])], "<=", 0.0)

    # covering / packing rows mixing both kinds
    for _ in range(int(rng.integers(1, 2 + nc // 3))):
        support = rng.choice(n, size=min(n, int(rng.integers(2, 6))), replace=False)
        coefs = [(int(k), float(rng.uniform(-3, 3))) for k in support]
        if rng.random() < 0.5:
            row(coefs, ">=", rng.uniform(-2.0, 2.0))
        else:
            row(coefs, "<=", rng.uniform(0.0, 6.0))

    c = np.concatenate([rng.uniform(-2.0, 4.0, nb), rng.uniform(-1.0, 3.0, nc)]).round(3)
    A = np.array(rows) if rows else np.zeros((0, n))
    return MILPData(c, A, np.array(senses, dtype=object), np.array(rhs), lb, ub, is_bin)
