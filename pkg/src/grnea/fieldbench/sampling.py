"""Latin hypercube designs over box-bounded parameter spaces."""

import numpy as np
from scipy.stats import qmc


def lhs_sample(bounds, n_samples: int, seed: int) -> np.ndarray:
    """Return an ``(n_samples, d)`` Latin hypercube design inside ``bounds``.

    ``bounds`` is a sequence of ``(low, high)`` pairs. Each dimension has
    exactly one point in each of the ``n_samples`` equal-width strata.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    b = np.asarray(bounds, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("bounds must be (low, high) pairs with low < high")
    unit = qmc.LatinHypercube(d=len(b), seed=np.random.default_rng(seed)).random(n_samples)
    return b[:, 0] + unit * (b[:, 1] - b[:, 0])
