"""Image-quality, regression-accuracy and diversity metrics.

Pixel values live on the unit scale throughout, so the peak value for PSNR
and the dynamic range for SSIM are both 1 unless stated otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(mse_value: float, p_max: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; a zero error returns ``inf``."""
    if mse_value < 0:
        raise ValueError("mse must be non-negative")
    if mse_value == 0:
        return math.inf
    return 20.0 * math.log10(p_max) - 10.0 * math.log10(mse_value)


@dataclass(frozen=True)
class SsimConstants:
    L: float = 1.0
    k1: float = 0.01
    k2: float = 0.03

    @property
    def c1(self) -> float:
        return (self.k1 * self.L) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.L) ** 2


def ssim(a, b, k: SsimConstants = SsimConstants()) -> float:
    """Structural similarity from whole-image statistics, averaged over channels.

    Images are (h, w, 3); each channel uses its global mean, variance and
    covariance (no sliding window).
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    a = a.reshape(-1, a.shape[-1])
    b = b.reshape(-1, b.shape[-1])
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    var_a, var_b = a.var(axis=0), b.var(axis=0)
    cov = ((a - mu_a) * (b - mu_b)).mean(axis=0)
    num = (2 * mu_a * mu_b + k.c1) * (2 * cov + k.c2)
    den = (mu_a ** 2 + mu_b ** 2 + k.c1) * (var_a + var_b + k.c2)
    return float(np.mean(num / den))


def image_metrics(references, outputs) -> dict:
    """Mean MSE, PSNR and SSIM over paired image stacks."""
    refs, outs = _pair(references, outputs)
    errors = [mse(r, o) for r, o in zip(refs, outs)]
    return {
        "mse": float(np.mean(errors)),
        "psnr": float(np.mean([psnr(e) for e in errors])),
        "ssim": float(np.mean([ssim(r, o) for r, o in zip(refs, outs)])),
    }


# -- regression accuracy --------------------------------------------------------

def _regression_pair(actual, predicted):
    y, p = _pair(actual, predicted)
    y, p = y.ravel(), p.ravel()
    if y.size < 2:
        raise ValueError("need at least two points")
    std = y.std()
    if std == 0:
        raise ValueError("actual values are constant; R2/RAAE/RMAE are undefined")
    return y, p, std


def r_squared(actual, predicted) -> float:
    y, p, _ = _regression_pair(actual, predicted)
    return float(1.0 - np.sum((y - p) ** 2) / np.sum((y - y.mean()) ** 2))


def raae(actual, predicted) -> float:
    """Relative average absolute error: mean |error| over the population STD."""
    y, p, std = _regression_pair(actual, predicted)
    return float(np.sum(np.abs(y - p)) / (y.size * std))


def rmae(actual, predicted) -> float:
    """Relative maximum absolute error: largest |error| over the population STD."""
    y, p, std = _regression_pair(actual, predicted)
    return float(np.max(np.abs(y - p)) / std)


@dataclass
class EvalReport:
    r_squared: float
    raae: float
    rmae: float
    residuals: np.ndarray

    def as_dict(self) -> dict:
        return {"r2": self.r_squared, "raae": self.raae, "rmae": self.rmae}


def evaluate_regression(actual, predicted) -> EvalReport:
    y, p, _ = _regression_pair(actual, predicted)
    return EvalReport(r_squared(y, p), raae(y, p), rmae(y, p), y - p)


# -- case diversity ----------------------------------------------------------------

@dataclass
class CdrResult:
    mean: float
    variance: float
    passed: bool
    n: int


def cdr(objectives, norm_min: float, norm_max: float, tau_mean: float = 0.15,
        tau_var: float = 0.03, min_samples: int = 100) -> CdrResult:
    """Case-diversity rule: normalized objectives should look uniform on [0, 1].

    Passes when the sample mean is within ``tau_mean`` of 1/2 and the
    population variance within ``tau_var`` of 1/12.
    """
    if not norm_max > norm_min:
        raise ValueError(f"degenerate normalization range [{norm_min}, {norm_max}]")
    f = np.asarray(objectives, dtype=np.float64).ravel()
    if f.size < min_samples:
        raise ValueError(f"CDR needs at least {min_samples} cases, got {f.size}")
    fn = np.clip((f - norm_min) / (norm_max - norm_min), 0.0, 1.0)
    mean, var = float(fn.mean()), float(fn.var())
    passed = abs(mean - 0.5) <= tau_mean and abs(var - 1.0 / 12.0) <= tau_var
    return CdrResult(mean, var, passed, int(f.size))


def cdr_from_moments(mean: float, variance: float, tau_mean: float = 0.15,
                     tau_var: float = 0.03) -> bool:
    return abs(mean - 0.5) <= tau_mean and abs(variance - 1.0 / 12.0) <= tau_var


# -- inception score -----------------------------------------------------------------

class ClassProbProvider(Protocol):
    def __call__(self, image: np.ndarray) -> np.ndarray:
        """Class probabilities p(y|x) for one image."""


class HueHistogramProvider:
    """Toy classifier: the normalized histogram of pixel hues over ``bins`` classes.

    Deterministic and cheap; stands in for a pretrained network in tests.
    """

    def __init__(self, bins: int = 10):
        self.bins = bins

    def __call__(self, image: np.ndarray) -> np.ndarray:
        from matplotlib.colors import rgb_to_hsv
        hue = rgb_to_hsv(np.clip(np.asarray(image, dtype=np.float64), 0, 1))[..., 0].ravel()
        counts, _ = np.histogram(hue, bins=self.bins, range=(0.0, 1.0))
        return counts / counts.sum()


def inception_score(images: Sequence, provider: Callable[[np.ndarray], np.ndarray],
                    floor: float = 1e-12) -> float:
    """exp of the mean KL divergence between p(y|x) and the marginal p(y)."""
    if len(images) < 1:
        raise ValueError("need at least one image")
    probs = np.stack([np.asarray(provider(im), dtype=np.float64) for im in images])
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("provider outputs must be probability vectors")
    marginal = probs.mean(axis=0)
    ratio = np.maximum(probs, floor) / np.maximum(marginal, floor)
    kl = np.sum(probs * np.log(ratio), axis=1)
    return float(np.exp(kl.mean()))
