"""Differentiable building blocks for the residual VAEs.

Tensors are ``torch.Tensor`` in ``(batch, channel, height, width)`` layout and
autograd supplies the backward passes. The layers themselves (SAME-padded
convolution, switchable normalization, half-pixel bilinear resampling, the
bottleneck residual blocks, the Gaussian latent utilities and Adam) are
written out here so that every piece of the model has a single, testable
definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn
import torch.nn.functional as F


class ShapeError(ValueError):
    """Raised when a tensor does not have the shape an operation needs."""


def check_tensor4(x: torch.Tensor, name: str = "input", finite: bool = True) -> torch.Tensor:
    if x.dim() != 4:
        raise ShapeError(f"{name} must be rank-4 (n, c, h, w), got shape {tuple(x.shape)}")
    if any(s <= 0 for s in x.shape):
        raise ShapeError(f"{name} has an empty dimension: {tuple(x.shape)}")
    if finite and not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")
    return x


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    """Return (before, after) padding so that out = ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None,
           stride: int = 1, check_finite: bool = True) -> torch.Tensor:
    """2-D cross-correlation with TensorFlow-style SAME padding."""
    check_tensor4(x, finite=check_finite)
    if weight.dim() != 4:
        raise ShapeError(f"weight must be (c_out, c_in, kh, kw), got {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias must have shape ({weight.shape[0]},), got {tuple(bias.shape)}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    kh, kw = weight.shape[2], weight.shape[3]
    top, bottom = same_padding(x.shape[2], kh, stride)
    left, right = same_padding(x.shape[3], kw, stride)
    if top or bottom or left or right:
        x = F.pad(x, (left, right, top, bottom))
    return F.conv2d(x, weight, bias, stride=stride)


def relu(x: torch.Tensor) -> torch.Tensor:
    return torch.clamp_min(x, 0.0)


def he_uniform_(weight: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    fan_in = weight.shape[1] * weight.shape[2] * weight.shape[3]
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        weight.copy_(torch.rand(weight.shape, generator=generator, dtype=weight.dtype) * 2 * bound - bound)
    return weight


class Conv2d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(c_out, c_in, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(c_out))
        he_uniform_(self.weight, generator if generator is not None else torch.Generator().manual_seed(0))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, check_finite=False)


class Dense(nn.Module):
    """Fully connected map expressed as a 1x1 convolution on a 1x1 grid."""

    def __init__(self, d_in: int, d_out: int, generator: torch.Generator | None = None):
        super().__init__()
        self.conv = Conv2d(d_in, d_out, 1, 1, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv(x.reshape(x.shape[0], -1, 1, 1)).reshape(x.shape[0], -1)


# -- switchable normalization -------------------------------------------------

def _moments(x: torch.Tensor, dims: tuple[int, ...]) -> tuple[torch.Tensor, torch.Tensor]:
    mean = x.mean(dim=dims, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=dims, keepdim=True)
    return mean, var


def switchable_norm(x: torch.Tensor, lambda_mu: torch.Tensor, lambda_var: torch.Tensor,
                    gamma: torch.Tensor, beta: torch.Tensor, eps: float = 1e-5,
                    bn_stats: tuple[torch.Tensor, torch.Tensor] | None = None,
                    return_stats: bool = False, check_finite: bool = True):
    """Normalize with a softmax-weighted mix of batch, instance and layer statistics.

    ``bn_stats`` replaces the batch-scope moments (shape ``(1, C, 1, 1)`` each);
    it is how a trained model normalizes single samples at inference.
    """
    check_tensor4(x, finite=check_finite)
    if eps <= 0:
        raise ValueError(f"epsilon must be positive, got {eps}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    mu_in, var_in = _moments(x, (2, 3))
    mu_ln, var_ln = _moments(x, (1, 2, 3))
    if bn_stats is None:
        mu_bn, var_bn = _moments(x, (0, 2, 3))
    else:
        mu_bn, var_bn = bn_stats
    w = torch.softmax(lambda_mu, dim=0)
    wv = torch.softmax(lambda_var, dim=0)
    mean = w[0] * mu_bn + w[1] * mu_in + w[2] * mu_ln
    var = wv[0] * var_bn + wv[1] * var_in + wv[2] * var_ln
    out = (x - mean) / torch.sqrt(var + eps)
    out = out * gamma.view(1, c, 1, 1) + beta.view(1, c, 1, 1)
    if return_stats:
        return out, (mu_bn, var_bn)
    return out


class SwitchableNorm2d(nn.Module):
    """Switchable normalization layer.

    Training always uses the statistics of the current batch. After training,
    :meth:`end_stat_collection` installs batch-scope moments averaged over the
    training set so that inference on any batch size, including one, is a
    pure per-sample function.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        if eps <= 0:
            raise ValueError(f"epsilon must be positive, got {eps}")
        self.eps = eps
        self.lambda_mu = nn.Parameter(torch.zeros(3))
        self.lambda_var = nn.Parameter(torch.zeros(3))
        self.gamma = nn.Parameter(torch.ones(channels))
        self.beta = nn.Parameter(torch.zeros(channels))
        self.register_buffer("bn_mean", torch.zeros(1, channels, 1, 1))
        self.register_buffer("bn_var", torch.ones(1, channels, 1, 1))
        self.register_buffer("frozen", torch.zeros((), dtype=torch.bool))
        self._collect: list | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        use_frozen = bool(self.frozen) and not self.training and self._collect is None
        stats = (self.bn_mean, self.bn_var) if use_frozen else None
        out, used = switchable_norm(x, self.lambda_mu, self.lambda_var, self.gamma, self.beta,
                                    self.eps, bn_stats=stats, return_stats=True,
                                    check_finite=False)
        if self._collect is not None:
            self._collect.append((x.shape[0], used[0].detach(), used[1].detach()))
        return out

    def begin_stat_collection(self) -> None:
        self._collect = []

    def end_stat_collection(self) -> None:
        """Average the collected batch moments (weighted by batch size) and freeze them."""
        collected, self._collect = self._collect, None
        if not collected:
            raise RuntimeError("no batches were collected")
        total = sum(n for n, _, _ in collected)
        mean = sum(n * m for n, m, _ in collected) / total
        # pooled variance: within-batch variance plus spread of batch means
        var = sum(n * (v + (m - mean) ** 2) for n, m, v in collected) / total
        with torch.no_grad():
            self.bn_mean.copy_(mean)
            self.bn_var.copy_(var)
            self.frozen.fill_(True)


# -- bilinear resampling ------------------------------------------------------

def interpolation_matrix(n_in: int, n_out: int, dtype=torch.float64) -> torch.Tensor:
    """Row i holds the 1-D linear interpolation weights of output sample i.

    Half-pixel centres: src = (dst + 0.5) * n_in / n_out - 0.5, clamped to
    [0, n_in - 1].
    """
    dst = torch.arange(n_out, dtype=torch.float64)
    src = ((dst + 0.5) * (n_in / n_out) - 0.5).clamp(0.0, n_in - 1)
    i0 = torch.floor(src).long().clamp(max=n_in - 1)
    i1 = (i0 + 1).clamp(max=n_in - 1)
    frac = src - i0.to(torch.float64)
    m = torch.zeros(n_out, n_in, dtype=torch.float64)
    rows = torch.arange(n_out)
    m.index_put_((rows, i0), 1.0 - frac, accumulate=True)
    m.index_put_((rows, i1), frac, accumulate=True)
    return m.to(dtype)


def bilinear_resize(x: torch.Tensor, out_h: int, out_w: int,
                    check_finite: bool = True) -> torch.Tensor:
    """Resize by linear interpolation along x, then along y."""
    check_tensor4(x, finite=check_finite)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be positive, got {out_h}x{out_w}")
    my = interpolation_matrix(x.shape[2], out_h, x.dtype)
    mx = interpolation_matrix(x.shape[3], out_w, x.dtype)
    return torch.einsum("yh,nchw,xw->ncyx", my, x, mx)


# -- residual blocks ----------------------------------------------------------

class EncoderBlock(nn.Module):
    """(n, c, h, w) -> (n, 2c, h/2, w/2) bottleneck block with projection shortcut."""

    def __init__(self, c: int, generator: torch.Generator | None = None, eps: float = 1e-5):
        super().__init__()
        g = generator
        self.conv1 = Conv2d(c, c, 1, 1, g)
        self.norm1 = SwitchableNorm2d(c, eps)
        self.conv2 = Conv2d(c, 2 * c, 3, 2, g)
        self.norm2 = SwitchableNorm2d(2 * c, eps)
        self.conv3 = Conv2d(2 * c, 2 * c, 1, 1, g)
        self.norm3 = SwitchableNorm2d(2 * c, eps)
        self.shortcut = Conv2d(c, 2 * c, 1, 2, g)

    def main_path(self, x: torch.Tensor) -> torch.Tensor:
        h = relu(self.norm1(self.conv1(x)))
        h = relu(self.norm2(self.conv2(h)))
        return self.norm3(self.conv3(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_tensor4(x, finite=False)
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"encoder block needs even spatial size, got {tuple(x.shape[2:])}")
        return self.main_path(x) + self.shortcut(x)


class DecoderBlock(nn.Module):
    """(n, c, h, w) -> (n, c/2, 2h, 2w); mirror of :class:`EncoderBlock`."""

    def __init__(self, c: int, generator: torch.Generator | None = None, eps: float = 1e-5):
        super().__init__()
        if c % 2:
            raise ShapeError(f"decoder block needs an even channel count, got {c}")
        g = generator
        half = c // 2
        self.conv1 = Conv2d(c, c, 1, 1, g)
        self.norm1 = SwitchableNorm2d(c, eps)
        self.conv2 = Conv2d(c, half, 3, 1, g)
        self.norm2 = SwitchableNorm2d(half, eps)
        self.conv3 = Conv2d(half, half, 1, 1, g)
        self.norm3 = SwitchableNorm2d(half, eps)
        self.shortcut = Conv2d(c, half, 1, 1, g)

    @staticmethod
    def upsample(x: torch.Tensor) -> torch.Tensor:
        return bilinear_resize(x, 2 * x.shape[2], 2 * x.shape[3], check_finite=False)

    def main_path(self, x: torch.Tensor) -> torch.Tensor:
        h = relu(self.norm1(self.conv1(x)))
        h = relu(self.norm2(self.conv2(self.upsample(h))))
        return self.norm3(self.conv3(h))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_tensor4(x, finite=False)
        if x.shape[1] != self.conv1.weight.shape[1]:
            raise ShapeError(f"decoder block expects {self.conv1.weight.shape[1]} channels, got {x.shape[1]}")
        return self.main_path(x) + self.shortcut(self.upsample(x))


# -- Gaussian latent ------------------------------------------------------------

def reparameterize(mu: torch.Tensor, log_var: torch.Tensor,
                   generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw z = mu + sigma * u with u ~ N(0, I)."""
    if mu.shape != log_var.shape:
        raise ShapeError("mu and log_var must have the same shape")
    u = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    return mu + torch.exp(0.5 * log_var) * u


def kl_divergence(mu: torch.Tensor, log_var: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last dimension."""
    if mu.shape != log_var.shape:
        raise ShapeError("mu and log_var must have the same shape")
    return -0.5 * torch.sum(1.0 + log_var - mu ** 2 - torch.exp(log_var), dim=-1)


def vae_loss(reconstruction: torch.Tensor, target: torch.Tensor, mu: torch.Tensor,
             log_var: torch.Tensor, kl_weight: float = 1e-3) -> torch.Tensor:
    """Per-pixel MSE plus ``kl_weight`` times the per-dimension mean KL."""
    if reconstruction.shape != target.shape:
        raise ShapeError(
            f"reconstruction {tuple(reconstruction.shape)} and target {tuple(target.shape)} differ")
    if kl_weight < 0:
        raise ValueError("kl_weight must be non-negative")
    mse = torch.mean((reconstruction - target) ** 2)
    if kl_weight == 0:
        return mse
    kl = torch.mean(kl_divergence(mu, log_var)) / mu.shape[-1]
    return mse + kl_weight * kl


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


class Adam:
    """Adam with bias correction, updating parameters in place from ``.grad``."""

    def __init__(self, params, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.params = [p for p in params]
        self.state = AdamState(learning_rate, beta1, beta2, eps,
                               m=[torch.zeros_like(p) for p in self.params],
                               v=[torch.zeros_like(p) for p in self.params])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        grads = [torch.zeros_like(p) if p.grad is None else p.grad for p in self.params]
        for i, g in enumerate(grads):
            if not torch.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for parameter {i}")
        s = self.state
        s.step += 1
        c1 = 1.0 - s.beta1 ** s.step
        c2 = 1.0 - s.beta2 ** s.step
        for p, g, m, v in zip(self.params, grads, s.m, s.v):
            m.mul_(s.beta1).add_(g, alpha=1.0 - s.beta1)
            v.mul_(s.beta2).addcmul_(g, g, value=1.0 - s.beta2)
            p.sub_(s.learning_rate * (m / c1) / (torch.sqrt(v / c2) + s.eps))
