"""Numerical tolerances used across the package, collected in one place."""

# finite differences and Jacobian checks
FD_STEP = 1e-6
JACOBIAN_RTOL = 1e-4

# measurement-time uniformity check (relative to 1/f0)
UNIFORM_RTOL = 1e-9

# adaptive quadrature, absolute tolerance on log-integrals
QUAD_ABS_TOL = 1e-10

# optimality verification
VERIFY_TOL = 1e-7
CONTINUITY_TOL = 1e-9

# Newton iterations
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 100
NEWTON_MAX_HALVINGS = 10

# collocation mesh refinement acceptance
MESH_REFINE_TOL = 1e-6
