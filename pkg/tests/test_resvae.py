import numpy as np
import pytest
import torch

from grnea import resvae
from grnea.container import CheckpointError
from grnea.fieldbench import FiberBenchmark, lhs_sample
from grnea.resvae import ResVaeConfig
from grnea.tensor_nn import ShapeError

SMALL = dict(image_size=(16, 16, 3), n_blocks=2, base_channels=4, latent_dim=4, batch_size=8)


@pytest.fixture(scope="module")
def images():
    fb = FiberBenchmark()
    return np.stack([fb.render(a, 16) for a in lhs_sample(fb.bounds, 24, seed=0)])


@pytest.fixture(scope="module")
def trained(images):
    return resvae.train(ResVaeConfig(epochs=15, **SMALL), images, log_every=0)


def test_config_validation():
    with pytest.raises(ValueError):
        ResVaeConfig(image_size=(48, 48, 3), n_blocks=4)  # 48 = 3 * 16, base < 4
    with pytest.raises(ValueError):
        ResVaeConfig(image_size=(64, 32, 3))
    with pytest.raises(ValueError):
        ResVaeConfig(latent_dim=0)
    assert ResVaeConfig().bottleneck_shape == (128, 4, 4)
    assert ResVaeConfig(image_size=(256, 256, 3), n_blocks=6, latent_dim=256).bottleneck_shape == (512, 4, 4)


def test_shapes(trained, images):
    lat = resvae.encode(trained, images[:5])
    assert lat.mu.shape == lat.log_var.shape == (5, 4)
    out = resvae.decode(trained, lat.mu)
    assert out.shape == (5, 16, 16, 3)
    assert (out >= 0).all() and (out <= 1).all()
    assert resvae.decode(trained, lat.mu[0]).shape == (16, 16, 3)
    assert resvae.encode(trained, images[0]).mu.shape == (4,)


def test_input_errors(trained, images):
    with pytest.raises(ShapeError, match="bilinear_resize"):
        resvae.encode(trained, np.zeros((2, 8, 8, 3)))
    with pytest.raises(ShapeError):
        resvae.decode(trained, np.zeros(3))
    with pytest.raises(ValueError):
        resvae.decode(trained, np.full(4, np.nan))
    bad = images[:1].copy()
    bad[0, 0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        resvae.encode(trained, bad)


def test_inference_independent_of_batch(trained, images):
    # frozen statistics make each sample's output a function of that sample only
    z_all = resvae.encode(trained, images).mu
    z_one = np.stack([resvae.encode(trained, im).mu for im in images[:4]])
    np.testing.assert_allclose(z_all[:4], z_one, atol=1e-5)
    d_all = resvae.decode(trained, z_all[:6], batch_size=6)
    d_split = resvae.decode(trained, z_all[:6], batch_size=1)
    np.testing.assert_allclose(d_all, d_split, atol=1e-5)


def test_training_deterministic(images):
    cfg = ResVaeConfig(epochs=2, **SMALL)
    a, b = resvae.train(cfg, images, log_every=0), resvae.train(cfg, images, log_every=0)
    assert a.history == b.history
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def test_loss_decreases(trained):
    h = trained.history
    assert len(h) == 15 and h[-1] < 0.8 * h[0] and np.mean(h[-3:]) < np.mean(h[:3])


def test_overfits_single_image(images):
    cfg = ResVaeConfig(epochs=200, kl_weight=0.0, learning_rate=1e-2, **{**SMALL, "batch_size": 1})
    m = resvae.train(cfg, images[:1], log_every=0)
    err = float(np.mean((resvae.reconstruct(m, images[:1]) - images[:1]) ** 2))
    assert err < 1e-3


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        resvae.train(ResVaeConfig(epochs=1, **SMALL), np.zeros((0, 16, 16, 3)))


def test_features_are_latent_means(trained, images):
    np.testing.assert_array_equal(resvae.extract_features(trained, images[:3]),
                                  resvae.encode(trained, images[:3]).mu)


def test_checkpoint_round_trip(tmp_path, trained, images):
    p = tmp_path / "g.ckpt"
    resvae.save_checkpoint(trained, p)
    m = resvae.load_checkpoint(p, expected=trained.config)
    np.testing.assert_array_equal(resvae.reconstruct(m, images[:3]), resvae.reconstruct(trained, images[:3]))
    assert m.history == trained.history
    resvae.save_checkpoint(m, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == p.read_bytes()


def test_checkpoint_errors(tmp_path, trained):
    p = tmp_path / "g.ckpt"
    resvae.save_checkpoint(trained, p)
    other = ResVaeConfig(epochs=15, **{**SMALL, "latent_dim": 5})
    with pytest.raises(CheckpointError, match="expected"):
        resvae.load_checkpoint(p, expected=other)
    with pytest.raises(CheckpointError):
        resvae.load_checkpoint(p, kind="reducer")
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(CheckpointError, match="truncated"):
        resvae.load_checkpoint(p)


@pytest.mark.slow
def test_latent_means_centred(desk_run):
    out, _, _ = desk_run
    from grnea.fieldbench.dataset import read_dataset
    gen = resvae.load_checkpoint(out / "models" / "generator.ckpt")
    ds = read_dataset(out / "dataset", FiberBenchmark().param_names)
    mu = resvae.encode(gen, ds.images[:300]).mu
    worst = float(np.abs(mu.mean(axis=0)).max())
    assert worst <= 0.15, f"largest per-dimension mean of mu is {worst:.3f}"


@pytest.mark.slow
def test_latent_prior_ks(desk_run):
    from scipy.stats import kstest
    out, _, _ = desk_run
    from grnea.fieldbench.dataset import read_dataset
    gen = resvae.load_checkpoint(out / "models" / "generator.ckpt")
    ds = read_dataset(out / "dataset", FiberBenchmark().param_names)
    mu = resvae.encode(gen, ds.images[:300]).mu
    med = float(np.median([kstest(mu[:, j], "norm").statistic for j in range(mu.shape[1])]))
    assert med < 0.15, f"median KS statistic of mu against N(0, 1) is {med:.3f}"


def test_init_heads_starts_at_data_mean_and_prior(images):
    cfg = ResVaeConfig(**SMALL)
    model = resvae.ResVae(cfg)
    x = resvae._to_tensor(images, cfg)
    resvae.init_heads(model, x)
    model.train()
    with torch.no_grad():
        mu, log_var = model.encode_tensor(x)
        out = model.decode_tensor(mu)
    # no saturated channel at the start, posterior close to N(0, I)
    assert torch.allclose(out.mean((0, 2, 3)), x.mean((0, 2, 3)), atol=0.1)
    assert out.max() < 0.995 and log_var.abs().max() < 0.5 and mu.abs().max() < 1.0


def test_divergence_raises_training_error(images):
    cfg = ResVaeConfig(epochs=5, learning_rate=1e8, **SMALL)
    with pytest.raises(resvae.TrainingError, match="non-finite"):
        resvae.train(cfg, images, log_every=0)
