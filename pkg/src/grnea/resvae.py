"""Residual VAEs: the case generator and the feature extractor.

Both models share one architecture: a 3x3 stem, ``n_blocks`` encoder blocks
(halving the grid, doubling channels), dense heads for the latent mean and
log-variance, a dense projection back to the coarsest grid, ``n_blocks``
decoder blocks and a 3x3 output head squashed to [0, 1]. Only the latent
width differs between the generation model and the 16-feature
dimensionality-reduction model.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .container import CheckpointError, read_container, write_container
from .tensor_nn import (Adam, Conv2d, DecoderBlock, Dense, EncoderBlock, ShapeError,
                        SwitchableNorm2d, relu, reparameterize, vae_loss)

log = logging.getLogger(__name__)

FEATURE_DIM = 16


class TrainingError(RuntimeError):
    pass


def set_threads_from_env() -> None:
    n = os.environ.get("GRNEA_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


@dataclass
class ResVaeConfig:
    image_size: tuple = (64, 64, 3)
    n_blocks: int = 4
    base_channels: int = 8
    latent_dim: int = 32
    kl_weight: float = 1e-2
    epochs: int = 60
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.image_size = tuple(int(s) for s in self.image_size)
        h, w, c = self.image_size
        if h != w or c != 3:
            raise ValueError(f"image_size must be (h, h, 3), got {self.image_size}")
        base, rem = divmod(h, 2 ** self.n_blocks)
        if rem or base < 4:
            raise ValueError(f"image side {h} must be base * 2**{self.n_blocks} with base >= 4")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.kl_weight < 0 or self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("kl_weight >= 0, learning_rate > 0, batch_size >= 1, epochs >= 1 required")

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        side = self.image_size[0] // 2 ** self.n_blocks
        return self.base_channels * 2 ** self.n_blocks, side, side

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ResVaeConfig":
        return cls(**d)


@dataclass
class GaussianLatent:
    mu: np.ndarray
    log_var: np.ndarray


class ResVae(nn.Module):
    def __init__(self, config: ResVaeConfig):
        super().__init__()
        self.config = config
        g = torch.Generator().manual_seed(config.seed)
        c = config.base_channels
        self.stem = Conv2d(3, c, 3, 1, g)
        self.stem_norm = SwitchableNorm2d(c)
        self.encoder = nn.ModuleList()
        for _ in range(config.n_blocks):
            self.encoder.append(EncoderBlock(c, g))
            c *= 2
        flat = int(np.prod(config.bottleneck_shape))
        self.mu_head = Dense(flat, config.latent_dim, g)
        self.log_var_head = Dense(flat, config.latent_dim, g)
        self.project = Dense(config.latent_dim, flat, g)
        self.decoder = nn.ModuleList()
        for _ in range(config.n_blocks):
            self.decoder.append(DecoderBlock(c, g))
            c //= 2
        self.head = Conv2d(c, 3, 3, 1, g)
        self.history: list[float] = []

    def encode_tensor(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = relu(self.stem_norm(self.stem(x)))
        for block in self.encoder:
            h = block(h)
        h = h.reshape(h.shape[0], -1)
        return self.mu_head(h), self.log_var_head(h)

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        h = relu(self.project(z)).reshape(z.shape[0], *self.config.bottleneck_shape)
        for block in self.decoder:
            h = block(h)
        return torch.sigmoid(self.head(h))

    def forward(self, x: torch.Tensor, generator: torch.Generator | None = None):
        mu, log_var = self.encode_tensor(x)
        z = reparameterize(mu, log_var, generator)
        return self.decode_tensor(z), mu, log_var

    def sn_layers(self) -> list[SwitchableNorm2d]:
        return [m for m in self.modules() if isinstance(m, SwitchableNorm2d)]


# -- image <-> tensor ---------------------------------------------------------------

def _to_tensor(images: np.ndarray, config: ResVaeConfig) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[1:] != config.image_size:
        raise ShapeError(f"images must be {config.image_size}, got {arr.shape[1:]}; "
                         "resize with bilinear_resize first")
    if not np.isfinite(arr).all():
        raise ValueError("images contain non-finite pixels")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def _to_images(t: torch.Tensor) -> np.ndarray:
    return t.detach().numpy().transpose(0, 2, 3, 1).astype(np.float64)


# -- inference ------------------------------------------------------------------------

@torch.no_grad()
def encode(model: ResVae, images: np.ndarray, batch_size: int = 64) -> GaussianLatent:
    """Latent mean and log-variance for one image (h, w, 3) or a stack of them."""
    single = np.asarray(images).ndim == 3
    x = _to_tensor(images, model.config)
    model.eval()
    mus, lvs = [], []
    for s in range(0, x.shape[0], batch_size):
        mu, lv = model.encode_tensor(x[s:s + batch_size])
        mus.append(mu.numpy())
        lvs.append(lv.numpy())
    mu, lv = np.concatenate(mus).astype(np.float64), np.concatenate(lvs).astype(np.float64)
    return GaussianLatent(mu[0], lv[0]) if single else GaussianLatent(mu, lv)


@torch.no_grad()
def decode(model: ResVae, z: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Images in [0, 1] for one latent vector or a stack of them."""
    z = np.asarray(z, dtype=np.float32)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.shape[1] != model.config.latent_dim:
        raise ShapeError(f"latent vectors must have length {model.config.latent_dim}, got {z.shape[1]}")
    if not np.isfinite(z).all():
        raise ValueError("latent vector contains non-finite values")
    model.eval()
    zt = torch.from_numpy(np.ascontiguousarray(z))
    out = np.concatenate([_to_images(model.decode_tensor(zt[s:s + batch_size]))
                          for s in range(0, zt.shape[0], batch_size)])
    return out[0] if single else out


def reconstruct(model: ResVae, images: np.ndarray) -> np.ndarray:
    return decode(model, encode(model, images).mu)


def extract_features(dr_model: ResVae, images: np.ndarray) -> np.ndarray:
    """Deterministic compression: the DR encoder's latent mean."""
    return encode(dr_model, images).mu


# -- training ---------------------------------------------------------------------------

def train(config: ResVaeConfig, images: np.ndarray, log_every: int = 10) -> ResVae:
    set_threads_from_env()
    x = _to_tensor(images, config)
    n = x.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    torch.manual_seed(config.seed)
    model = ResVae(config)
    init_heads(model, x)
    opt = Adam(model.parameters(), config.learning_rate)
    rng = np.random.default_rng(config.seed)
    noise = torch.Generator().manual_seed(config.seed + 1)
    model.train()
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = torch.from_numpy(rng.permutation(n))
        total = 0.0
        for s in range(0, n, config.batch_size):
            batch = x[order[s:s + config.batch_size]]
            recon, mu, log_var = model(batch, noise)
            loss = vae_loss(recon, batch, mu, log_var, config.kl_weight)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {s}")
            opt.zero_grad()
            loss.backward()
            try:
                opt.step()
            except FloatingPointError as exc:
                raise TrainingError(f"{exc} at epoch {epoch}, batch starting {s}") from exc
            total += float(loss.detach()) * batch.shape[0]
        model.history.append(total / n)
        if log_every and (epoch % log_every == 0 or epoch == config.epochs - 1):
            log.info("epoch %d/%d loss %.6f (%.1fs)", epoch + 1, config.epochs,
                     model.history[-1], time.perf_counter() - t0)
    freeze_statistics(model, x, config.batch_size)
    model.eval()
    return model


@torch.no_grad()
def init_heads(model: ResVae, x: torch.Tensor, weight_scale: float = 0.1) -> None:
    """Shrink the He init of the output and latent heads.

    Large initial logits saturate the sigmoid (the near-white blue channel then
    loses its gradient for good); large initial latent moments start the KL
    term in the hundreds, and unused dimensions never settle on the prior.
    The output bias starts at the per-channel data mean, the posterior at N(0, I).
    """
    mean = x.mean(dim=(0, 2, 3)).clamp(0.01, 0.99)
    model.head.bias.copy_(torch.log(mean / (1 - mean)))
    model.head.weight.mul_(weight_scale)
    for head in (model.mu_head, model.log_var_head):
        head.conv.weight.mul_(weight_scale)
    model.log_var_head.conv.weight.mul_(weight_scale)


@torch.no_grad()
def freeze_statistics(model: ResVae, x: torch.Tensor, batch_size: int) -> None:
    """Average the batch-scope normalization moments over the training set.

    Inference then normalizes every sample with the same batch moments, so
    encode/decode are per-sample functions that ignore batch composition.
    """
    layers = model.sn_layers()
    for layer in layers:
        layer.begin_stat_collection()
    model.eval()
    for s in range(0, x.shape[0], batch_size):
        mu, _ = model.encode_tensor(x[s:s + batch_size])
        model.decode_tensor(mu)
    for layer in layers:
        layer.end_stat_collection()


# -- checkpoints ------------------------------------------------------------------------

def save_checkpoint(model: ResVae, path, kind: str = "resvae") -> None:
    arrays = {name: t.detach().numpy().astype("<f4") for name, t in model.state_dict().items()}
    write_container(path, kind, model.config.to_dict(), arrays,
                    meta={"history": [float(h) for h in model.history]})


def load_checkpoint(path, expected: ResVaeConfig | None = None, kind: str = "resvae") -> ResVae:
    header, arrays = read_container(path, kind)
    config = ResVaeConfig.from_dict(header["config"])
    if expected is not None and config != expected:
        raise CheckpointError(f"{path} was written for config {config}, expected {expected}")
    model = ResVae(config)
    state = model.state_dict()
    if set(state) != set(arrays):
        raise CheckpointError(f"{path} parameter names do not match the architecture")
    loaded = {}
    for name, ref in state.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(ref.shape):
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {tuple(ref.shape)}")
        loaded[name] = torch.from_numpy(arr.astype(np.float32)).to(ref.dtype)
    model.load_state_dict(loaded)
    model.history = list(header["meta"].get("history", []))
    model.eval()
    return model
