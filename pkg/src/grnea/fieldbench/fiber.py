"""Curved-fibre hole-plate benchmark.

The fibre path of each design is the quadratic surface

    z(x, y) = x + a1*y + a2*x*y + a3*x**2 + a4*y**2

over a unit-square plate (coordinates in [-0.5, 0.5]) with a centred
circular hole. Its raster, drawn through the fixed colour map, is the
"physical cloud image" of the case; the objective is the largest fibre
slope along y, max |dz/dy| = max |a1 + a2*x + 2*a4*y| over the plate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .colormap import apply_colormap

# Nominal coefficients; each design box is [0.5*a, 1.5*a].
NOMINAL = (0.3, 0.8, 1.5, 4.0)
HOLE_RADIUS = 0.2
PLATE_FRACTION = 0.875  # share of the image side covered by the plate


def fiber_field(alpha, x, y):
    """Evaluate the fibre-path polynomial; broadcasts over ``x`` and ``y``."""
    a1, a2, a3, a4 = (float(a) for a in alpha)
    return x + a1 * y + a2 * x * y + a3 * x * x + a4 * y * y


def plate_grid(nodes: int = 65) -> tuple[np.ndarray, np.ndarray]:
    """Plate node coordinates (including the square's corners), hole removed."""
    s = np.linspace(-0.5, 0.5, nodes)
    x, y = np.meshgrid(s, s)
    keep = x * x + y * y >= HOLE_RADIUS ** 2
    return x[keep], y[keep]


def pixel_coordinates(resolution: int):
    """Plate coordinates of pixel centres plus the plate and hole masks."""
    c = (np.arange(resolution) + 0.5) / resolution - 0.5
    x = c[None, :] / PLATE_FRACTION
    y = -c[:, None] / PLATE_FRACTION
    x, y = np.broadcast_arrays(x, y)
    in_plate = (np.abs(x) <= 0.5) & (np.abs(y) <= 0.5)
    in_hole = x * x + y * y < HOLE_RADIUS ** 2
    return x, y, in_plate & ~in_hole


@dataclass
class FiberBenchmark:
    nominal: tuple = NOMINAL
    name: str = "fiber"
    param_names: tuple = ("a1", "a2", "a3", "a4")
    response_names: tuple = ("objective",)
    sense: str = "minimize"
    bounds: np.ndarray = field(init=False)
    z_range: tuple = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.nominal, dtype=np.float64)
        self.bounds = np.sort(np.stack([0.5 * a, 1.5 * a], axis=1), axis=1)
        # z is linear in the coefficients, so its extremes over the design
        # box are attained at box corners.
        x, y = plate_grid(129)
        lo, hi = np.inf, -np.inf
        for corner in product(*self.bounds):
            z = fiber_field(corner, x, y)
            lo, hi = min(lo, z.min()), max(hi, z.max())
        self.z_range = (float(lo), float(hi))

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def midpoint(self) -> np.ndarray:
        return self.bounds.mean(axis=1)

    def render(self, alpha, resolution: int = 64) -> np.ndarray:
        """Rasterize the fibre field; background and hole are pure white."""
        x, y, mask = pixel_coordinates(resolution)
        lo, hi = self.z_range
        z = fiber_field(alpha, x, y)
        img = apply_colormap((z - lo) / (hi - lo))
        img[~mask] = 1.0
        return img

    def true_objective(self, alpha, nodes: int = 65) -> float:
        x, y = plate_grid(nodes)
        a1, a2, _, a4 = (float(a) for a in alpha)
        return float(np.max(np.abs(a1 + a2 * x + 2.0 * a4 * y)))

    def true_objective_batch(self, alphas: np.ndarray, nodes: int = 17) -> np.ndarray:
        x, y = plate_grid(nodes)
        al = np.atleast_2d(alphas)
        slope = al[:, 0:1] + al[:, 1:2] * x[None] + 2.0 * al[:, 3:4] * y[None]
        return np.abs(slope).max(axis=1)

    def evaluate(self, alpha) -> dict:
        return {"objective": self.true_objective(alpha)}

    def objective_from_responses(self, responses: dict) -> float:
        return float(responses["objective"])

    def dense_grid_oracle(self, points_per_dim: int = 101, chunk: int = 20000):
        """Brute-force minimum over a full grid of the coefficients that affect the objective.

        ``a3`` never enters dz/dy; it is held at its midpoint, which does not
        change the minimum.
        """
        axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in self.bounds]
        axes[2] = np.array([self.midpoint()[2]])
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
        best_val, best = np.inf, None
        for start in range(0, len(grid), chunk):
            vals = self.true_objective_batch(grid[start:start + chunk])
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_val, best = float(vals[i]), grid[start + i].copy()
        return best, best_val
