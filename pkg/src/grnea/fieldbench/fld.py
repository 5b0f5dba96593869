"""Forming-limit diagram evaluation of nodal strain states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def fld0(n: float, t: float) -> float:
    """Plane-strain intercept of the forming-limit curve (thickness clamped at 3 mm)."""
    return n * (23.36 + 14.042 * min(t, 3.0)) / (0.2116 * 100.0)


def forming_limit(eps2, fld0_value: float):
    """Limit major strain at minor strain ``eps2``.

    The steep branch (4.2, -0.627) covers eps2 <= 0 and the flat branch
    (-0.86, -0.785) covers eps2 > 0; both meet at fld0 for eps2 = 0.
    """
    e2 = np.asarray(eps2, dtype=np.float64)
    left = fld0_value + e2 * (4.2 * e2 - 0.627)
    right = fld0_value + e2 * (-0.86 * e2 - 0.785)
    return np.where(e2 <= 0.0, left, right)


@dataclass
class StrainField:
    eps1: np.ndarray
    eps2: np.ndarray
    n: float = 0.2116
    t: float = 0.8

    def __post_init__(self):
        self.eps1 = np.asarray(self.eps1, dtype=np.float64).ravel()
        self.eps2 = np.asarray(self.eps2, dtype=np.float64).ravel()
        if self.eps1.shape != self.eps2.shape or self.eps1.size < 1:
            raise ValueError("eps1 and eps2 must be equal-length, non-empty arrays")
        if self.n <= 0 or self.t <= 0:
            raise ValueError("hardening exponent and thickness must be positive")


@dataclass
class FldResult:
    fld0: float
    p: np.ndarray
    q: np.ndarray
    y_p: float
    y_q: float
    red_pct: float
    green_pct: float
    wrinkle_pct: float
    classes: np.ndarray  # 0 green, 1 red, 2 wrinkled


GREEN, RED, WRINKLED = 0, 1, 2


def fld_evaluate(s: StrainField) -> FldResult:
    if np.any(s.eps1 < s.eps2):
        bad = int(np.argmax(s.eps1 < s.eps2))
        raise ValueError(f"node {bad} has eps1 < eps2 ({s.eps1[bad]} < {s.eps2[bad]})")
    f0 = fld0(s.n, s.t)
    p = np.maximum(0.0, s.eps1 - forming_limit(s.eps2, f0))
    q = np.where(s.eps1 < -s.eps2, -(s.eps2 + s.eps1), 0.0)
    classes = np.full(s.eps1.shape, GREEN, dtype=np.int8)
    classes[(q > 0) & (p == 0)] = WRINKLED
    classes[p > 0] = RED
    m = classes.size
    return FldResult(
        fld0=f0, p=p, q=q,
        y_p=float(np.sum(p * p)), y_q=float(np.sum(q * q)),
        red_pct=100.0 * np.count_nonzero(classes == RED) / m,
        green_pct=100.0 * np.count_nonzero(classes == GREEN) / m,
        wrinkle_pct=100.0 * np.count_nonzero(classes == WRINKLED) / m,
        classes=classes,
    )


def constrained_objective(result: FldResult | None = None, *, red_pct: float | None = None,
                          green_pct: float | None = None, red_tol: float = 1e-8) -> float:
    """Green percentage, or 0 as soon as any node is at crack risk."""
    if result is not None:
        red_pct, green_pct = result.red_pct, result.green_pct
    return float(green_pct) if red_pct < red_tol else 0.0
