"""Outline-based plausibility filter for generated cases.

A case is binarized in HSV space (white = low saturation and high value,
everything else black), compared pixel by pixel with the outline of a
reference simulated case, and rejected when the number of disagreeing pixels
exceeds a threshold ``C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from matplotlib.colors import rgb_to_hsv as _mpl_rgb_to_hsv

from .container import read_container, write_container

WHITE = np.array([0, 0, 255], dtype=np.int64)
BLACK = np.array([0, 0, 0], dtype=np.int64)

# thresholds at 256 x 256 pixels, per benchmark
FULL_SCALE_THRESHOLDS = {"fiber": 3600, "strain": 1000}
FULL_SCALE_RESOLUTION = 256


def default_threshold(benchmark: str, resolution: int) -> int:
    """Full-scale (256 px) threshold scaled by pixel area to ``resolution``."""
    return max(1, round(FULL_SCALE_THRESHOLDS[benchmark] * (resolution / FULL_SCALE_RESOLUTION) ** 2))


def rgb_to_hsv(image: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] -> integer HSV with H in [0, 180), S and V in [0, 255]."""
    rgb = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    hsv = _mpl_rgb_to_hsv(rgb)
    h = np.rint(hsv[..., 0] * 180.0).astype(np.int64) % 180
    s = np.rint(hsv[..., 1] * 255.0).astype(np.int64)
    v = np.rint(hsv[..., 2] * 255.0).astype(np.int64)
    return np.stack([h, s, v], axis=-1)


@dataclass
class FilterConfig:
    reference: np.ndarray  # outline of the standard case, (h, w, 3) in HSV encoding
    threshold: int
    s_max: int = 30
    v_min: int = 221

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError(f"threshold C must be positive, got {self.threshold}")
        self.reference = np.asarray(self.reference, dtype=np.int64)

    @classmethod
    def from_reference_image(cls, image: np.ndarray, threshold: int, **kw) -> "FilterConfig":
        tmp = cls(np.zeros((1, 1, 3)), threshold, **kw)
        tmp.reference = binarize_outline(rgb_to_hsv(image), tmp)
        return tmp

    def save(self, path) -> None:
        write_container(path, "case-filter",
                        {"threshold": int(self.threshold), "s_max": self.s_max, "v_min": self.v_min},
                        {"reference": self.reference.astype("<i8")})

    @classmethod
    def load(cls, path) -> "FilterConfig":
        header, arrays = read_container(path, "case-filter")
        c = header["config"]
        return cls(arrays["reference"], c["threshold"], c["s_max"], c["v_min"])


def binarize_outline(hsv: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    """White (0, 0, 255) where S <= s_max and V >= v_min, black (0, 0, 0) elsewhere.

    Hue is not tested: the white range spans every hue.
    """
    hsv = np.asarray(hsv)
    white = (hsv[..., 1] <= cfg.s_max) & (hsv[..., 2] >= cfg.v_min)
    return np.where(white[..., None], WHITE, BLACK)


def outline(image: np.ndarray, cfg: FilterConfig) -> np.ndarray:
    return binarize_outline(rgb_to_hsv(image), cfg)


def noise_count(u_i: np.ndarray, u_o: np.ndarray) -> int:
    """Number of pixels where two outlines disagree."""
    u_i, u_o = np.asarray(u_i, dtype=np.int64), np.asarray(u_o, dtype=np.int64)
    if u_i.shape != u_o.shape:
        raise ValueError(f"outline shapes differ: {u_i.shape} vs {u_o.shape}")
    return int(np.abs(u_i - u_o).sum() // 255)


def is_reasonable(image: np.ndarray, cfg: FilterConfig) -> tuple[bool, int]:
    n = noise_count(outline(image, cfg), cfg.reference)
    return n <= cfg.threshold, n


def noise_counts(images, cfg: FilterConfig) -> np.ndarray:
    """Vectorized :func:`noise_count` of a stack of RGB images against the reference."""
    imgs = np.asarray(images)
    if imgs.ndim == 3:
        imgs = imgs[None]
    u = outline(imgs, cfg)
    return (np.abs(u - cfg.reference[None]).sum(axis=(1, 2, 3)) // 255).astype(np.int64)


def calibrate_threshold(reconstructions, cfg: FilterConfig, quantile: float = 0.95,
                        safety: float = 1.2, min_cases: int = 20) -> int:
    """Threshold admitting the ``quantile`` share of known-good reconstructions, with margin."""
    recs = list(reconstructions) if not isinstance(reconstructions, np.ndarray) else reconstructions
    if len(recs) == 0:
        raise ValueError("no reconstructions given")
    if len(recs) < min_cases:
        raise ValueError(f"calibration needs at least {min_cases} reconstructions, got {len(recs)}")
    if not 0.0 < quantile <= 1.0:
        raise ValueError("quantile must lie in (0, 1]")
    counts = noise_counts(np.asarray(recs), cfg)
    return max(1, math.ceil(float(np.quantile(counts, quantile)) * safety))


def occlude(image: np.ndarray, rng: np.random.Generator, size: int = 20,
            fill=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Copy of ``image`` with a random ``size`` x ``size`` patch painted ``fill`` (background white)."""
    img = np.array(image, dtype=np.float64, copy=True)
    h, w = img.shape[:2]
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    img[top:top + size, left:left + size] = fill
    return img
