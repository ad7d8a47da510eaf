"""Integer codes shared by the numpy and numba kernels."""

COMP_EXP = 0
COMP_LOG = 1
COMP_GCE = 2
COMP_MAE = 3
SUM_SQ = 4
SUM_EXP = 5
SUM_RHO = 6
CSTND_HINGE = 7
CSTND_SQ = 8
CSTND_EXP = 9
CSTND_RHO = 10

# exponents are clamped here before exponentiation
EXP_CLAMP = 30.0
