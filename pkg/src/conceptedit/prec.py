#: Number of digits to which rates and averages are rounded in reports.
DEFAULT_REPORT_PRECISION = 4

#: Relative tolerance below which negative eigenvalues of the covariance
#: product in the Fréchet distance are clamped to zero.
#:
#: Covariance products are only positive semi-definite up to rounding errors.
#: Eigenvalues more negative than ``-EIGVAL_TOLERANCE * max(1, |λ_max|)``
#: indicate a degenerate input and are reported instead of being clamped.
EIGVAL_TOLERANCE = 1e-8

#: Maximum embedding dimension accepted by the distribution metrics.
MAX_EMBEDDING_DIM = 4096

#: Largest integer that survives the round trip through a float64 cost matrix.
MAX_EXACT_FLOAT_INT = 2 ** 53
