"""Numerical constants shared across the package.

The tolerance stack has three layers: geometric membership tests,
certificate slack for Hausdorff/metric bounds, and separation slack for
checkpoint distances of adversarial runs.
"""

# Membership/projection tolerance, scaled by (1 + ||x||) at the call site.
DEFAULT_TOL = 1e-9
# Slack added to Hausdorff and AW certificates.
CERT_SLACK = 1e-8
# Slack on the separation of adversarial checkpoints.
SEPARATION_SLACK = 1e-6

DYKSTRA_CHANGE_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 100_000

# Displacement vector estimation.
DISPLACEMENT_STARTS = 8
DISPLACEMENT_BUDGET = 100_000
DISPLACEMENT_SPREAD = 1e-6

FIXED_POINT_STEP_TOL = 1e-11

# Hard cap on "smallest index" searches of the adversary.
PHASE_CAP = 1_000_000
# Classical phases may be longer when the iteration map is affine.
AFFINE_PHASE_CAP = 10**12

TRACE_MAX_POINTS = 10_000
