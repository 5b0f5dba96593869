"""Synthetic sheet-forming benchmark with analytic strain surfaces.

Five process parameters (punch/die friction, binder friction, drawing speed,
blank-holder force, drawbead resistance) set a single "restraint" level and a
hot-spot relief factor. Low restraint lets the flange draw in with strong
compressive minor strain (wrinkling); high restraint stretches the two
punch-corner hot spots past the forming-limit curve (cracks). The feasible
window in between is where the green share peaks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fld import GREEN, RED, WRINKLED, StrainField, constrained_objective, fld_evaluate, forming_limit, fld0

BOUNDS = np.array([
    [0.05, 0.25],      # f1, punch/die friction
    [0.05, 0.25],      # f2, binder friction
    [1000.0, 5000.0],  # v, drawing speed (mm/s)
    [60.0, 160.0],     # BHF, blank holder force (ton)
    [60.0, 200.0],     # F, drawbead resistance (N/mm)
])
RESTRAINT_WEIGHTS = np.array([0.15, 0.2, 0.0, 0.35, 0.3])

CLASS_COLORS = {
    GREEN: np.array([0.0, 0.8, 0.0]),
    RED: np.array([0.9, 0.0, 0.0]),
    WRINKLED: np.array([0.55, 0.0, 0.85]),
}


def blank_rho(x, y):
    """Superellipse radius: 1 on the blank boundary."""
    return (np.abs(x) ** 4 + np.abs(y / 0.75) ** 4) ** 0.25


def strain_surfaces(u, x, y):
    """Principal and minor strain at blank points for unit-box design ``u``."""
    u = np.asarray(u, dtype=np.float64)
    x, y = np.asarray(x), np.asarray(y)
    # a batch of designs (B, 5) broadcasts against the point arrays
    expand = (slice(None),) + (None,) * x.ndim if u.ndim == 2 else ()
    restraint = (u @ RESTRAINT_WEIGHTS)[expand]
    speed = u[..., 2][expand]
    u0, u1 = u[..., 0][expand], u[..., 1][expand]
    rho = blank_rho(x, y)
    hot = (np.exp(-((x - 0.45) ** 2 + (y - 0.25) ** 2) / 0.02)
           + np.exp(-((x + 0.45) ** 2 + (y + 0.25) ** 2) / 0.02))
    hot_amp = 0.05 + 0.45 * restraint ** 2 * (1.2 - 0.4 * speed)
    ripple = 0.015 * np.sin(2 * np.pi * x) * np.cos(np.pi * y) * (u0 - 0.5)
    eps1 = (0.08 + 0.10 * (1 - rho ** 2) + hot_amp * hot + ripple) * (0.8 + 0.4 * restraint)
    flange = np.clip((rho - 0.55) / 0.45, 0.0, 1.0) ** 2
    eps2 = (0.05 * (1 - rho ** 2) * (0.5 + restraint)
            - flange * (0.35 - 0.3 * restraint)
            + 0.02 * hot * (u1 - 0.5))
    return eps1, np.minimum(eps2, eps1)


def node_grid(nodes: int = 31):
    s = np.linspace(-1.0, 1.0, nodes)
    x, y = np.meshgrid(s, s)
    keep = blank_rho(x, y) <= 1.0
    return x[keep], y[keep]


@dataclass
class StrainBenchmark:
    n: float = 0.2116
    t: float = 0.8
    name: str = "strain"
    param_names: tuple = ("f1", "f2", "v", "BHF", "F")
    response_names: tuple = ("red_pct", "green_pct")
    sense: str = "maximize"
    bounds: np.ndarray = field(default_factory=lambda: BOUNDS.copy())

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def midpoint(self) -> np.ndarray:
        return self.bounds.mean(axis=1)

    def to_unit(self, alpha) -> np.ndarray:
        a = np.asarray(alpha, dtype=np.float64)
        return (a - self.bounds[:, 0]) / (self.bounds[:, 1] - self.bounds[:, 0])

    def from_unit(self, u) -> np.ndarray:
        return self.bounds[:, 0] + np.asarray(u, dtype=np.float64) * (self.bounds[:, 1] - self.bounds[:, 0])

    def optimum_by_construction(self) -> np.ndarray:
        """A design inside the crack-free window: mid restraint, fastest draw."""
        return self.from_unit([0.5, 0.5, 1.0, 0.55, 0.5])

    def strain_field(self, alpha, nodes: int = 31) -> StrainField:
        x, y = node_grid(nodes)
        e1, e2 = strain_surfaces(self.to_unit(alpha), x, y)
        return StrainField(e1, e2, n=self.n, t=self.t)

    def render(self, alpha, resolution: int = 64) -> np.ndarray:
        """Formability map of the blank: class colour shaded by major strain."""
        c = ((np.arange(resolution) + 0.5) / resolution - 0.5) * 2.3
        x, y = np.meshgrid(c, -c)
        inside = blank_rho(x, y) <= 1.0
        e1, e2 = strain_surfaces(self.to_unit(alpha), x, y)
        f0 = fld0(self.n, self.t)
        p = e1 - forming_limit(e2, f0)
        cls = np.full(x.shape, GREEN)
        cls[(e1 < -e2) & (p <= 0)] = WRINKLED
        cls[p > 0] = RED
        shade = 0.55 + 0.45 * np.clip(e1 / 0.45, 0.0, 1.0)
        img = np.ones(x.shape + (3,))
        for k, col in CLASS_COLORS.items():
            sel = inside & (cls == k)
            img[sel] = col[None, :] * shade[sel][:, None]
        return img

    def strain_benchmark(self, alpha, resolution: int = 64):
        return self.render(alpha, resolution), self.strain_field(alpha)

    def evaluate(self, alpha) -> dict:
        r = fld_evaluate(self.strain_field(alpha))
        return {
            "objective": constrained_objective(r),
            "red_pct": r.red_pct,
            "green_pct": r.green_pct,
            "wrinkle_pct": r.wrinkle_pct,
            "y_p": r.y_p,
            "y_q": r.y_q,
        }

    def true_objective(self, alpha) -> float:
        return self.evaluate(alpha)["objective"]

    def objective_from_responses(self, responses: dict, red_tol: float = 0.5) -> float:
        """Constrained objective from surrogate predictions.

        Predicted red shares are never exactly zero, so a looser tolerance (in
        percent) separates "no cracks" from "cracks" on surrogate output.
        """
        return constrained_objective(red_pct=max(responses["red_pct"], 0.0),
                                     green_pct=responses["green_pct"], red_tol=red_tol)

    def dense_grid_oracle(self, points_per_dim: int = 11, chunk: int = 4096):
        """Brute-force maximum of the true constrained objective over a full grid."""
        axes = [np.linspace(0.0, 1.0, points_per_dim)] * self.dim
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        x, y = node_grid()
        f0 = fld0(self.n, self.t)
        best_val, best = -np.inf, None
        for start in range(0, len(grid), chunk):
            u = grid[start:start + chunk]
            e1, e2 = strain_surfaces(u, x, y)
            red = np.any(e1 - forming_limit(e2, f0) > 0, axis=1)
            green = 100.0 * np.count_nonzero(e1 >= -e2, axis=1) / x.size
            vals = np.where(red, 0.0, green)
            i = int(np.argmax(vals))
            if vals[i] > best_val:
                best_val, best = float(vals[i]), u[i]
        return self.from_unit(best), best_val
