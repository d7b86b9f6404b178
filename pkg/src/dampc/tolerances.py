"""Numerical tolerances shared across the package.

All feasibility and optimality checks reference these constants so that
the tolerance policy lives in exactly one place.
"""

# Primal feasibility tolerance for LP/QP solutions.
FEAS_TOL = 1e-8

# KKT residual tolerance (stationarity, dual feasibility, complementarity).
KKT_TOL = 1e-6

# Tolerance for vertex membership checks (H v <= h + VERTEX_TOL).
VERTEX_TOL = 1e-9

# Support value of a polytope vs. max over its vertex list.
SUPPORT_MATCH_TOL = 1e-7

# Quadratic regularization added to every QP so the problem is strictly convex.
QP_REG = 1e-9

# Eigenvalue threshold below which a cost matrix is rejected as indefinite.
PSD_TOL = 1e-8

# Largest dimension for which explicit box vertex enumeration is allowed.
BOX_VERTEX_DIM_CAP = 12
