"""Least-squares support vector regression with an RBF kernel.

Training solves the LSSVR dual system

    [ 0   1^T          ] [b]     [0]
    [ 1   K + I/gamma  ] [alpha] = [y]

with K_ij = exp(-|f_i - f_j|^2 / (2 sigma^2)); predictions are
sum_i alpha_i K(f, f_i) + b. Features are z-scored with training statistics
before the kernel is applied, and the transform is stored with the model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh
from scipy.spatial.distance import cdist, pdist

from .container import read_container, write_container
from .metrics import r_squared

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12


class IllConditionedError(np.linalg.LinAlgError):
    pass


def rbf_kernel(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * sigma * sigma))


@dataclass
class LssvrModel:
    support: np.ndarray   # standardized training features, (n, d)
    alpha: np.ndarray     # (n,)
    bias: float
    sigma: float
    gamma: float
    mean: np.ndarray      # feature standardization
    scale: np.ndarray

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    def transform(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        if f.ndim == 1:
            f = f[None]
        if f.shape[1] != self.dim:
            raise ValueError(f"model takes {self.dim}-dimensional features, got {f.shape[1]}")
        return (f - self.mean) / self.scale

    def predict(self, features) -> np.ndarray | float:
        single = np.asarray(features).ndim == 1
        k = rbf_kernel(self.transform(features), self.support, self.sigma)
        out = k @ self.alpha + self.bias
        return float(out[0]) if single else out


def fit(features, targets, sigma: float, gamma: float, standardize: bool = True) -> LssvrModel:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"features {x.shape} and targets {y.shape} do not line up")
    if y.size < 2:
        raise ValueError("LSSVR needs at least two training points")
    if sigma <= 0 or gamma <= 0:
        raise ValueError("kernel width and regularization must be positive")
    if standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    xs = (x - mean) / scale
    h = rbf_kernel(xs, xs, sigma) + np.eye(y.size) / gamma
    ev = eigvalsh(h)
    cond = ev[-1] / ev[0] if ev[0] > 0 else np.inf
    if not cond < MAX_CONDITION:
        raise IllConditionedError(
            f"kernel system is numerically singular (condition number {cond:.3g} > {MAX_CONDITION:.0e}); "
            "remove duplicate feature rows or lower gamma")
    # Block elimination of the bordered system: H eta = 1, H nu = y.
    c = cho_factor(h)
    eta = cho_solve(c, np.ones(y.size))
    nu = cho_solve(c, y)
    bias = float(nu.sum() / eta.sum())
    alpha = nu - bias * eta
    return LssvrModel(xs, alpha, bias, float(sigma), float(gamma), mean, scale)


def predict(model: LssvrModel, features):
    return model.predict(features)


def fit_multi(features, target_matrix, sigma, gamma, standardize: bool = True) -> list[LssvrModel]:
    """One independent model per target column; ``sigma``/``gamma`` may be per-column."""
    y = np.asarray(target_matrix, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    p = y.shape[1]
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (p,))
    gam = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (p,))
    return [fit(features, y[:, j], sig[j], gam[j], standardize) for j in range(p)]


def median_distance(features) -> float:
    x = np.asarray(features, dtype=np.float64)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    d = pdist((x - x.mean(axis=0)) / scale)
    return float(np.median(d)) if d.size else 1.0


def default_sigma_grid(features, n: int = 9) -> np.ndarray:
    return median_distance(features) * np.logspace(-1, 1, n)


DEFAULT_GAMMA_GRID = np.logspace(0, 6, 7)


def fold_assignment(features, targets, k_folds: int, seed: int) -> np.ndarray:
    """Fold index per sample, fixed by the seed and the data, not by row order."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    w = np.random.default_rng(seed).standard_normal(x.shape[1] + 1)
    key = np.column_stack([x, y]) @ w
    order = np.lexsort((y, key))
    folds = np.empty(len(y), dtype=np.int64)
    folds[order] = np.arange(len(y)) % k_folds
    return folds


def cv_score(features, targets, sigma: float, gamma: float, folds: np.ndarray) -> float:
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    scores = []
    for k in np.unique(folds):
        test = folds == k
        if np.ptp(y[test]) == 0:
            log.warning("fold %d has constant targets; scoring it as -inf", k)
            scores.append(-np.inf)
            continue
        try:
            m = fit(x[~test], y[~test], sigma, gamma)
        except IllConditionedError:
            scores.append(-np.inf)
            continue
        scores.append(r_squared(y[test], m.predict(x[test])))
    return float(np.mean(scores))


def grid_search(features, targets, sigma_grid=None, gamma_grid=None, k_folds: int = 5,
                seed: int = 0) -> tuple[float, float]:
    """(sigma, gamma) with the best mean k-fold R^2; ties keep the first cell."""
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    sigma_grid = default_sigma_grid(features) if sigma_grid is None else np.asarray(sigma_grid, float)
    gamma_grid = DEFAULT_GAMMA_GRID if gamma_grid is None else np.asarray(gamma_grid, float)
    if sigma_grid.size == 0 or gamma_grid.size == 0:
        raise ValueError("hyperparameter grids must be non-empty")
    folds = fold_assignment(features, targets, k_folds, seed)
    best, best_score = (float(sigma_grid[0]), float(gamma_grid[0])), -np.inf
    for s in sigma_grid:
        for g in gamma_grid:
            score = cv_score(features, targets, s, g, folds)
            if score > best_score:
                best, best_score = (float(s), float(g)), score
    return best


# -- persistence -------------------------------------------------------------------------

def save_models(path, models: dict[str, LssvrModel]) -> None:
    arrays, config = {}, {}
    for name, m in models.items():
        config[name] = {"bias": m.bias, "sigma": m.sigma, "gamma": m.gamma}
        arrays[f"{name}/support"] = m.support
        arrays[f"{name}/alpha"] = m.alpha
        arrays[f"{name}/mean"] = m.mean
        arrays[f"{name}/scale"] = m.scale
    write_container(path, "lssvr", config, arrays, meta={"order": list(models)})


def load_models(path) -> dict[str, LssvrModel]:
    header, arrays = read_container(path, "lssvr")
    out = {}
    for name in header["meta"]["order"]:
        c = header["config"][name]
        out[name] = LssvrModel(arrays[f"{name}/support"], arrays[f"{name}/alpha"], c["bias"],
                               c["sigma"], c["gamma"], arrays[f"{name}/mean"], arrays[f"{name}/scale"])
    return out
