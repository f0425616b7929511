import numpy as np
import pytest

from conftest import gradcheck, param_gradcheck
from genpretrain.generators import (
    GENERATOR_KINDS,
    UCR_THRESHOLD,
    UEA_THRESHOLD,
    BetaVAEGenerator,
    DiffusionGenerator,
    GANGenerator,
    GenBudget,
    MultivariateGaussianGenerator,
    NoiseSchedule,
    UNet1d,
    critic_loss,
    diffusion_loss,
    fit_mg,
    gen_random_walk,
    gen_sinusoidal,
    generator_loss,
    kl_divergence,
    load_generator,
    make_generator,
    q_sample,
    reconstruction_loss,
    sample_mg,
    save_generator,
    vae_loss,
)
from genpretrain.tensor import Tensor

TINY = {
    "rw": {},
    "sw": {},
    "mg": {},
    "gan": {"epochs": 2, "batch_size": 8, "latent_dim": 8, "width": 4},
    "vae": {"epochs": 2, "batch_size": 8, "latent_dim": 8, "width": 4},
    "diff": {"epochs": 2, "batch_size": 8, "width": 4, "steps": 10},
}


def _toy(n=12, channels=2, length=10, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2 * np.pi, length)
    phase = rng.uniform(0, np.pi, (n, channels, 1))
    return np.sin(t + phase) + 0.1 * rng.standard_normal((n, channels, length))


# -- generation budget ----------------------------------------------------------


def test_n_gen_examples():
    assert GenBudget(UCR_THRESHOLD, 500).n_gen == 1494
    assert GenBudget(UCR_THRESHOLD, 2000).n_gen == 2000
    assert GenBudget(UEA_THRESHOLD, 3398).n_gen == 3398
    assert GenBudget(UEA_THRESHOLD, 3000).n_gen == 3398


def test_n_gen_is_max_on_grid():
    from genpretrain.generators import n_gen_policy

    for s in range(1, 80):
        for tau in range(1, 80):
            assert n_gen_policy(s, tau) == max(s, tau)
    with pytest.raises(ValueError):
        n_gen_policy(0, 10)


# -- random walk -----------------------------------------------------------------


def test_random_walk_starts_at_zero_and_is_reproducible():
    a = gen_random_walk(5, 20, 3, 7)
    assert a.shape == (5, 3, 20)
    np.testing.assert_array_equal(a[:, :, 0], 0.0)
    np.testing.assert_array_equal(a, gen_random_walk(5, 20, 3, 7))


def test_random_walk_variance_law():
    x = gen_random_walk(10_000, 101, 1, 0)[:, 0]
    for t in (10, 100):
        assert abs(x[:, t].var() / t - 1.0) < 0.10


def test_random_walk_increments_mean_zero():
    n, length = 2000, 50
    inc = np.diff(gen_random_walk(n, length, 1, 1), axis=-1)
    assert abs(inc.mean()) < 4 / np.sqrt(n * length)


# -- sinusoids -------------------------------------------------------------------


def test_sinusoid_bound_and_zero_amplitude():
    rng = np.random.default_rng(0)
    x = gen_sinusoidal(200, 50, 1, rng)
    # replay the draws to recover amplitudes and offsets
    r = np.random.default_rng(0)
    amp = r.uniform(0.5, 2.0, (200, 1, 2, 1))
    r.uniform(1.0, 12.5, (200, 1, 2, 1))
    r.uniform(0, 2 * np.pi, (200, 1, 2, 1))
    off = r.uniform(-1.0, 1.0, (200, 1, 2, 1))
    bound = (amp.sum(axis=2) + np.abs(off).sum(axis=2))
    assert np.all(np.abs(x) <= bound + 1e-12)

    flat = gen_sinusoidal(4, 30, 2, np.random.default_rng(3), amplitude_range=(0.0, 0.0))
    r = np.random.default_rng(3)
    shape = (4, 2, 2, 1)
    r.uniform(0.0, 0.0, shape)
    r.uniform(1.0, 7.5, shape)
    r.uniform(0, 2 * np.pi, shape)
    offsets = r.uniform(-1.0, 1.0, shape)
    np.testing.assert_allclose(flat, np.broadcast_to(offsets.sum(axis=2), flat.shape), atol=1e-12)


def test_sinusoid_spectral_peaks():
    length, n = 256, 60
    x = gen_sinusoidal(n, length, 1, np.random.default_rng(11))
    r = np.random.default_rng(11)
    r.uniform(0.5, 2.0, (n, 1, 2, 1))
    freqs = r.uniform(1.0, length / 4, (n, 1, 2, 1))[:, 0, :, 0]
    window = np.hanning(length)
    checked = 0
    for series, (f1, f2) in zip(x[:, 0], freqs):
        if min(f1, f2) < 3 or abs(f1 - f2) < 4:
            continue  # peaks would merge with DC leakage or each other
        mag = np.abs(np.fft.rfft((series - series.mean()) * window))
        peaks = [k for k in range(1, mag.size - 1) if mag[k] >= mag[k - 1] and mag[k] >= mag[k + 1]]
        top = sorted(sorted(peaks, key=lambda k: -mag[k])[:2])
        for got, want in zip(top, sorted((f1, f2))):
            assert abs(got - want) <= 1.0
        checked += 1
    assert checked >= 30


# -- multivariate Gaussian --------------------------------------------------------


def test_mg_degenerate_reproduces_series():
    series = np.sin(np.linspace(0, 5, 17))[None, None, :]
    model = fit_mg(np.repeat(series, 5, axis=0))
    samples = sample_mg(model, 20, 0)
    np.testing.assert_allclose(samples, np.broadcast_to(series, samples.shape), atol=1e-9)


def test_mg_needs_two_series():
    with pytest.raises(ValueError, match="2"):
        fit_mg(np.ones((1, 1, 8)))


def test_mg_variances_nonnegative_and_output_real():
    model = fit_mg(_toy())
    assert np.all(model.var_real >= 0) and np.all(model.var_imag >= 0)
    out = sample_mg(model, 5, 0)
    assert out.dtype == np.float64 and out.shape == (5, 2, 10)


def test_mg_sample_means_within_clt_bound():
    real = np.random.default_rng(0).normal(size=(50, 1, 32)).cumsum(axis=-1)
    model = fit_mg(real)
    n = 10_000
    spec = np.fft.rfft(sample_mg(model, n, 1), axis=-1)
    hits, total = 0, 0
    for emp, mean, var in ((spec.real, model.mean_real, model.var_real), (spec.imag, model.mean_imag, model.var_imag)):
        se = np.sqrt(var / n)
        live = var > 1e-20  # imaginary DC/Nyquist parts are exactly zero
        dev = np.abs(emp.mean(axis=0) - mean)
        hits += int(np.sum(dev[live] <= 3 * se[live]))
        total += int(live.sum())
        assert np.all(dev[~live] < 1e-9)
    assert hits / total >= 0.95


def test_mg_refit_recovers_means():
    model = fit_mg(_toy(40, 1, 16))
    refit = fit_mg(sample_mg(model, 10_000, 2))
    se = np.sqrt(model.var_real / 10_000)
    live = model.var_real > 1e-20
    within = np.abs(refit.mean_real - model.mean_real)[live] <= 3 * se[live]
    assert within.mean() >= 0.95


# -- GAN ----------------------------------------------------------------------------


def test_critic_loss_antisymmetric(rng):
    a, b = Tensor(rng.normal(size=5)), Tensor(rng.normal(size=7))
    assert critic_loss(a, b).item() == pytest.approx(-critic_loss(b, a).item(), abs=1e-15)
    assert generator_loss(a).item() == pytest.approx(-a.data.mean())


def test_gan_reconstruction_decreases():
    X = _toy(16, 1, 16)
    gan = GANGenerator(epochs=200, batch_size=16, latent_dim=8, width=4, lr=3e-3, random_state=0).fit(X)
    recon = [h["reconstruction"] for h in gan.history_]
    assert len(recon) == 200
    assert np.mean(recon[-10:]) < 0.5 * np.mean(recon[:10])
    assert gan.sample(3, 0).shape == (3, 1, 16)


def test_gan_critic_weights_clipped():
    gan = GANGenerator(**TINY["gan"]).fit(_toy())
    for p in gan.critic_.parameters():
        assert np.max(np.abs(p.data)) <= gan.clip


# -- beta-VAE ---------------------------------------------------------------------


def test_kl_examples():
    assert kl_divergence(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4)))).item() == 0.0
    assert kl_divergence(Tensor(np.ones((2, 1))), Tensor(np.zeros((2, 1)))).item() == pytest.approx(0.5)
    assert kl_divergence(Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 3)))).item() == pytest.approx(1.5)


def test_beta_zero_is_pure_reconstruction(rng):
    x, xr = rng.normal(size=(3, 1, 6)), rng.normal(size=(3, 1, 6))
    mu, lv = Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(3, 4)))
    assert vae_loss(x, Tensor(xr), mu, lv, 0.0).item() == pytest.approx(reconstruction_loss(x, Tensor(xr)).item(), abs=1e-12)


def test_negative_beta_rejected():
    with pytest.raises(ValueError, match="beta"):
        BetaVAEGenerator(beta=-0.1).fit(_toy())


# -- diffusion -------------------------------------------------------------------------


def test_q_sample_boundary(rng):
    x0, noise = rng.normal(size=(2, 1, 5)), rng.normal(size=(2, 1, 5))
    np.testing.assert_array_equal(q_sample(x0, [1.0, 1.0], noise), x0)
    np.testing.assert_allclose(q_sample(x0, [0.0, 0.0], noise), noise)
    a = np.array([0.3, 0.8])
    expected = np.sqrt(a)[:, None, None] * x0 + np.sqrt(1 - a)[:, None, None] * noise
    np.testing.assert_allclose(q_sample(x0, a, noise), expected, atol=1e-15)


def test_oracle_denoiser_zero_loss(rng):
    noise = rng.normal(size=(4, 2, 8))
    assert diffusion_loss(noise, Tensor(noise)).item() == 0.0


def test_noise_schedule_validation():
    s = NoiseSchedule.linear(100, 1e-4, 0.02)
    assert s.steps == 100 and np.all(np.diff(s.alpha_bars) < 0)
    assert 0 < s.alpha_bars[-1] < s.alpha_bars[0] < 1
    for bad in ([0.0, 0.1], [0.5, 1.0], [0.2, 0.1], []):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array(bad))


@pytest.fixture(scope="module")
def fitted_diffusion():
    return DiffusionGenerator(**TINY["diff"]).fit(_toy())


@pytest.mark.parametrize("seed", range(5))
def test_diffusion_sampling_finite(fitted_diffusion, seed):
    out = fitted_diffusion.sample(3, seed)
    assert out.shape == (3, 2, 10) and np.all(np.isfinite(out))


def test_unet_preserves_shape_with_odd_length():
    net = UNet1d(3, width=4, time_dim=8, rng=0)
    assert net(Tensor(np.zeros((2, 3, 11))), np.array([0, 5])).shape == (2, 3, 11)


# -- gradients --------------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_generator_loss_gradients(seed):
    rng = np.random.default_rng(seed)
    mu, lv = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)) * 0.5
    assert gradcheck(kl_divergence, mu, lv) < 1e-4
    x = rng.normal(size=(3, 1, 6))
    assert gradcheck(lambda xr, m, v: vae_loss(x, xr, m, v, 0.7), rng.normal(size=(3, 1, 6)), mu, lv) < 1e-4
    noise = rng.normal(size=(3, 1, 6))
    assert gradcheck(lambda p: diffusion_loss(noise, p), rng.normal(size=(3, 1, 6))) < 1e-4
    assert gradcheck(critic_loss, rng.normal(size=4), rng.normal(size=5)) < 1e-4


def test_unet_parameter_gradients():
    rng = np.random.default_rng(0)
    net = UNet1d(1, width=2, time_dim=4, rng=0)
    x, noise = rng.normal(size=(2, 1, 8)), rng.normal(size=(2, 1, 8))
    t = np.array([1, 7])
    assert param_gradcheck(net, lambda: diffusion_loss(noise, net(Tensor(x), t)), max_entries=10) < 1e-4


# -- shared estimator behaviour -----------------------------------------------------------


@pytest.mark.parametrize("kind", GENERATOR_KINDS)
def test_shape_and_bit_reproducibility(kind):
    X = _toy()
    a = make_generator(kind, **TINY[kind]).fit(X).sample(4, 5)
    b = make_generator(kind, **TINY[kind]).fit(X).sample(4, 5)
    assert a.shape == (4, 2, 10)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", GENERATOR_KINDS)
def test_checkpoint_round_trip(kind, tmp_path):
    gen = make_generator(kind, **TINY[kind]).fit(_toy())
    save_generator(tmp_path / "g.npz", gen)
    loaded = load_generator(tmp_path / "g.npz")
    assert loaded.get_params() == gen.get_params()
    np.testing.assert_array_equal(loaded.sample(3, 9), gen.sample(3, 9))


def test_unknown_kind_and_unfitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(ValueError, match="unknown"):
        make_generator("flow")
    with pytest.raises(NotFittedError):
        MultivariateGaussianGenerator().sample(2)
