"""Independent reference computations used by the test suite.

These deliberately avoid the library's own solve paths: LPs are checked
by enumerating candidate vertices of the feasible polytope, and
equality-constrained QPs by solving the KKT linear system directly.
"""

import itertools

import numpy as np


def brute_force_lp(c, a_ub, b_ub):
    """min c x over {a_ub x <= b_ub} by vertex enumeration.

    Intersects every d-subset of constraint rows and keeps the feasible
    intersection points. Assumes a bounded feasible set.
    """
    c = np.asarray(c, float)
    a_ub = np.asarray(a_ub, float)
    b_ub = np.asarray(b_ub, float)
    d = c.size
    best = None
    for rows in itertools.combinations(range(a_ub.shape[0]), d):
        mat = a_ub[list(rows)]
        if abs(np.linalg.det(mat)) < 1e-10:
            continue
        x = np.linalg.solve(mat, b_ub[list(rows)])
        if np.all(a_ub @ x <= b_ub + 1e-9):
            val = c @ x
            if best is None or val < best:
                best = val
    return best


def kkt_equality_qp(P, q, a_eq, b_eq, reg=1e-9):
    """Closed-form solution of min 0.5 x'Px + q'x s.t. a_eq x = b_eq."""
    P = np.asarray(P, float)
    a_eq = np.atleast_2d(np.asarray(a_eq, float))
    q = np.asarray(q, float)
    b_eq = np.atleast_1d(np.asarray(b_eq, float))
    n = q.size
    m = b_eq.size
    kkt = np.block([[P + reg * np.eye(n), a_eq.T], [a_eq, np.zeros((m, m))]])
    sol = np.linalg.solve(kkt, np.concatenate([-q, b_eq]))
    return sol[:n]


def random_lp_instance(rng, d=4, extra_rows=8, box=3.0):
    a = np.vstack([rng.normal(size=(extra_rows, d)), np.eye(d), -np.eye(d)])
    b = np.concatenate([rng.uniform(0.5, 2.0, size=extra_rows), np.full(2 * d, box)])
    c = rng.normal(size=d)
    return c, a, b


def random_equality_qp_instance(rng, n=6, m=2):
    root = rng.normal(size=(n, n))
    P = root.T @ root + 0.5 * np.eye(n)
    q = rng.normal(size=n)
    a_eq = rng.normal(size=(m, n))
    b_eq = rng.normal(size=m)
    return P, q, a_eq, b_eq
