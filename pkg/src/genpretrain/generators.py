"""Time-series generators used to synthesise pretraining data.

Three are parameter-free or closed-form (random walk, sinusoids, a
per-frequency Gaussian) and three are trained networks (a BiGAN-style
encoder/generator/critic, a beta-VAE and a 1D U-Net diffusion model). All
share an estimator surface: ``fit(X)`` on a (n, channels, length) array and
``sample(n, random_state)`` returning an array of the same trailing shape.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .tensor import Conv1d, Linear, Module, Tensor, concat, no_grad
from .tensor import functional as F
from .tensor.nn import _rng
from .training import OptimConfig, Trainer, check_finite, minibatches, steps_per_epoch
from .validation import check_random_generator, check_series_array

UCR_THRESHOLD = 1494
UEA_THRESHOLD = 3398
GENERATOR_KINDS = ("rw", "sw", "mg", "gan", "vae", "diff")


def n_gen_policy(pretrain_size, threshold):
    """Generate ``threshold`` series when the pretraining set is smaller,
    otherwise as many as it holds."""
    if pretrain_size < 1 or threshold < 1:
        raise ValueError("sizes must be positive")
    return threshold if pretrain_size < threshold else pretrain_size


@dataclass(frozen=True)
class GenBudget:
    threshold: int
    pretrain_size: int

    @property
    def n_gen(self):
        return n_gen_policy(self.pretrain_size, self.threshold)


# -- simple generators --------------------------------------------------------


def gen_random_walk(n, length, channels, rng):
    """Walks starting at 0 with i.i.d. standard normal increments."""
    rng = check_random_generator(rng)
    steps = rng.standard_normal((n, channels, length))
    steps[:, :, 0] = 0.0
    return np.cumsum(steps, axis=-1)


def gen_sinusoidal(n, length, channels, rng, amplitude_range=(0.5, 2.0), offset_range=(-1.0, 1.0)):
    """Each channel is the sum of two sinusoids with random amplitude,
    frequency (1 to length/4 cycles per series), phase and offset."""
    rng = check_random_generator(rng)
    shape = (n, channels, 2, 1)
    amp = rng.uniform(*amplitude_range, shape)
    freq = rng.uniform(1.0, max(1.0, length / 4.0), shape)
    phase = rng.uniform(0.0, 2.0 * np.pi, shape)
    offset = rng.uniform(*offset_range, shape)
    t = np.arange(length) / length
    return (amp * np.sin(2.0 * np.pi * freq * t + phase) + offset).sum(axis=2)


class _SeriesGenerator(BaseEstimator):
    def _record_shape(self, X):
        X = check_series_array(X)
        self.n_channels_, self.length_ = X.shape[1], X.shape[2]
        return X

    def _sample_shape(self):
        check_is_fitted(self, "length_")
        return self.n_channels_, self.length_


class RandomWalkGenerator(_SeriesGenerator):
    def fit(self, X, y=None):
        self._record_shape(X)
        return self

    def sample(self, n, random_state=None):
        c, length = self._sample_shape()
        return gen_random_walk(n, length, c, random_state)


class SinusoidalGenerator(_SeriesGenerator):
    def __init__(self, amplitude_range=(0.5, 2.0), offset_range=(-1.0, 1.0)):
        self.amplitude_range = amplitude_range
        self.offset_range = offset_range

    def fit(self, X, y=None):
        self._record_shape(X)
        return self

    def sample(self, n, random_state=None):
        c, length = self._sample_shape()
        return gen_sinusoidal(n, length, c, random_state, self.amplitude_range, self.offset_range)


@dataclass
class MGModel:
    """Independent Gaussians over the real and imaginary rFFT coefficients,
    per channel and frequency bin."""

    mean_real: np.ndarray
    var_real: np.ndarray
    mean_imag: np.ndarray
    var_imag: np.ndarray
    length: int


def fit_mg(X):
    X = check_series_array(X)
    if len(X) < 2:
        raise ValueError("the per-frequency variance needs at least 2 series")
    spec = np.fft.rfft(X, axis=-1)
    return MGModel(
        spec.real.mean(axis=0), spec.real.var(axis=0), spec.imag.mean(axis=0), spec.imag.var(axis=0), X.shape[-1]
    )


def sample_mg(model, n, rng):
    rng = check_random_generator(rng)
    shape = (n,) + model.mean_real.shape
    real = model.mean_real + np.sqrt(model.var_real) * rng.standard_normal(shape)
    imag = model.mean_imag + np.sqrt(model.var_imag) * rng.standard_normal(shape)
    return np.fft.irfft(real + 1j * imag, n=model.length, axis=-1)


class MultivariateGaussianGenerator(_SeriesGenerator):
    def fit(self, X, y=None):
        X = self._record_shape(X)
        self.model_ = fit_mg(X)
        return self

    def sample(self, n, random_state=None):
        check_is_fitted(self, "model_")
        return sample_mg(self.model_, n, random_state)


# -- convolutional building blocks -------------------------------------------


class DBlock(Module):
    """Halve the temporal resolution: strided conv + leaky ReLU."""

    def __init__(self, c_in, c_out, rng=None):
        self.conv = Conv1d(c_in, c_out, 3, stride=2, padding=1, rng=rng)

    def forward(self, x):
        return self.conv(x).leaky_relu(0.2)


class UBlock(Module):
    """Double the temporal resolution: nearest upsampling + conv + leaky ReLU."""

    def __init__(self, c_in, c_out, rng=None):
        self.conv = Conv1d(c_in, c_out, 3, padding=1, rng=rng)

    def forward(self, x):
        return self.conv(F.upsample1d(x, 2)).leaky_relu(0.2)


def working_length(length, depth):
    unit = 2**depth
    return unit * math.ceil(length / unit)


def _pad_to(x, target):
    x = x if isinstance(x, Tensor) else Tensor(x)
    return F.pad1d(x, 0, target - x.shape[-1]) if x.shape[-1] < target else x


class ConvEncoder(Module):
    """Two DBlocks, flatten, then ``n_heads`` parallel linear outputs."""

    def __init__(self, channels, length, latent_dim, width=32, n_heads=1, rng=None):
        rng = _rng(rng)
        self.length = working_length(length, 2)
        self.down = [DBlock(channels, width, rng), DBlock(width, 2 * width, rng)]
        flat = 2 * width * self.length // 4
        self.heads = [Linear(flat, latent_dim, rng=rng) for _ in range(n_heads)]

    def features(self, x):
        h = _pad_to(x, self.length)
        for block in self.down:
            h = block(h)
        return h.reshape(h.shape[0], -1)

    def forward(self, x):
        h = self.features(x)
        outs = [head(h) for head in self.heads]
        return outs[0] if len(outs) == 1 else outs


class ConvDecoder(Module):
    """Linear to a quarter-resolution map, two UBlocks, conv to channels."""

    def __init__(self, channels, length, latent_dim, width=32, rng=None):
        rng = _rng(rng)
        self.length = length
        self.width = width
        self.quarter = working_length(length, 2) // 4
        self.fc = Linear(latent_dim, 2 * width * self.quarter, rng=rng)
        self.up = [UBlock(2 * width, width, rng), UBlock(width, width, rng)]
        self.out = Conv1d(width, channels, 3, padding=1, rng=rng)

    def forward(self, z):
        h = self.fc(z).leaky_relu(0.2).reshape(z.shape[0], 2 * self.width, self.quarter)
        for block in self.up:
            h = block(h)
        return self.out(h)[:, :, : self.length]


# -- GAN ------------------------------------------------------------------------


def reconstruction_loss(x, x_rec):
    return F.mse_loss(x_rec, x)


def critic_loss(d_fake, d_real):
    """Wasserstein critic objective: mean score of fakes minus mean of reals."""
    return d_fake.mean() - d_real.mean()


def generator_loss(d_fake):
    return -d_fake.mean()


class GANGenerator(_SeriesGenerator):
    """BiGAN-style trio trained per minibatch in three phases: encoder+generator
    on reconstruction MSE, critic on the Wasserstein critic loss (with weight
    clipping), generator on the Wasserstein generator loss."""

    def __init__(self, epochs=100, batch_size=64, latent_dim=128, width=32, lr=1e-3, clip=0.01, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.width = width
        self.lr = lr
        self.clip = clip
        self.random_state = random_state

    def _build(self, rng):
        c, length = self.n_channels_, self.length_
        self.encoder_ = ConvEncoder(c, length, self.latent_dim, self.width, rng=rng)
        self.generator_ = ConvDecoder(c, length, self.latent_dim, self.width, rng=rng)
        self.critic_ = ConvEncoder(c, length, 1, self.width, rng=rng)

    def fit(self, X, y=None):
        X = self._record_shape(X)
        rng = check_random_generator(self.random_state)
        self._build(rng)
        optim = OptimConfig(lr=self.lr)
        total = self.epochs * steps_per_epoch(len(X), self.batch_size)
        ae = Trainer(self.encoder_.parameters() + self.generator_.parameters(), optim, total)
        critic = Trainer(self.critic_.parameters(), optim, total)
        gen = Trainer(self.generator_.parameters(), optim, total)
        self.history_ = []
        for epoch in range(1, self.epochs + 1):
            rows = []
            for b, idx in enumerate(minibatches(len(X), self.batch_size, rng)):
                where = f"GAN epoch {epoch}, batch {b}"
                xb = X[idx]
                l_rec = ae.step(reconstruction_loss(xb, self.generator_(self.encoder_(xb))), where)
                with no_grad():
                    fake = self.generator_(Tensor(rng.standard_normal((len(idx), self.latent_dim)))).data
                l_crit = critic.step(critic_loss(self.critic_(fake), self.critic_(xb)), where)
                if self.clip:
                    for p in self.critic_.parameters():
                        np.clip(p.data, -self.clip, self.clip, out=p.data)
                z = Tensor(rng.standard_normal((len(idx), self.latent_dim)))
                l_gen = gen.step(generator_loss(self.critic_(self.generator_(z))), where)
                rows.append((l_rec, l_crit, l_gen))
            self.history_.append(dict(zip(("reconstruction", "critic", "generator"), np.mean(rows, axis=0).tolist())))
        return self

    def sample(self, n, random_state=None):
        check_is_fitted(self, "generator_")
        rng = check_random_generator(random_state)
        with no_grad():
            return self.generator_(Tensor(rng.standard_normal((n, self.latent_dim)))).data.copy()

    def networks(self):
        return {"encoder": self.encoder_, "generator": self.generator_, "critic": self.critic_}


# -- beta-VAE -----------------------------------------------------------------


def kl_divergence(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dims, batch mean."""
    return ((mu * mu + logvar.exp() - 1.0 - logvar) * 0.5).sum(axis=-1).mean()


def vae_loss(x, x_rec, mu, logvar, beta):
    return F.mse_loss(x_rec, x) + kl_divergence(mu, logvar) * beta


class BetaVAEGenerator(_SeriesGenerator):
    """Encoder with parallel mean / log-variance heads and a conv decoder,
    trained on reconstruction MSE + beta * KL with the reparameterisation
    ``z = mu + exp(logvar / 2) * eps``."""

    def __init__(self, epochs=100, batch_size=64, latent_dim=128, width=32, lr=1e-3, beta=1.0, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.latent_dim = latent_dim
        self.width = width
        self.lr = lr
        self.beta = beta
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        X = self._record_shape(X)
        rng = check_random_generator(self.random_state)
        c, length = self.n_channels_, self.length_
        self.encoder_ = ConvEncoder(c, length, self.latent_dim, self.width, n_heads=2, rng=rng)
        self.decoder_ = ConvDecoder(c, length, self.latent_dim, self.width, rng=rng)
        trainer = Trainer(
            self.encoder_.parameters() + self.decoder_.parameters(),
            OptimConfig(lr=self.lr),
            self.epochs * steps_per_epoch(len(X), self.batch_size),
        )
        self.history_ = []
        for epoch in range(1, self.epochs + 1):
            losses = []
            for b, idx in enumerate(minibatches(len(X), self.batch_size, rng)):
                xb = X[idx]
                mu, logvar = self.encoder_(xb)
                z = mu + (logvar * 0.5).exp() * rng.standard_normal(mu.shape)
                loss = vae_loss(xb, self.decoder_(z), mu, logvar, self.beta)
                losses.append(trainer.step(loss, f"VAE epoch {epoch}, batch {b}"))
            self.history_.append(float(np.mean(losses)))
        return self

    def sample(self, n, random_state=None):
        check_is_fitted(self, "decoder_")
        rng = check_random_generator(random_state)
        with no_grad():
            return self.decoder_(Tensor(rng.standard_normal((n, self.latent_dim)))).data.copy()

    def networks(self):
        return {"encoder": self.encoder_, "decoder": self.decoder_}


# -- diffusion --------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0 or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("diffusion betas must lie strictly inside (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValueError("diffusion betas must be non-decreasing")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, steps=100, start=1e-4, end=0.02):
        return cls(np.linspace(start, end, steps))

    @property
    def steps(self):
        return self.betas.size

    @property
    def alphas(self):
        return 1.0 - self.betas

    @property
    def alpha_bars(self):
        return np.cumprod(self.alphas)


def q_sample(x0, alpha_bar, noise):
    """Noised input ``sqrt(a) * x0 + sqrt(1 - a) * noise`` for per-sample ``a``."""
    a = np.asarray(alpha_bar, dtype=np.float64).reshape((-1,) + (1,) * (np.ndim(x0) - 1))
    return np.sqrt(a) * x0 + np.sqrt(1.0 - a) * noise


def timestep_embedding(t, dim):
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = np.asarray(t, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


class UNet1d(Module):
    """Two down blocks, a middle conv, two up blocks fed by concatenated skips."""

    def __init__(self, channels, width=32, time_dim=32, rng=None):
        rng = _rng(rng)
        self.time_dim = time_dim
        self.time1 = Linear(time_dim, width, rng=rng)
        self.time2 = Linear(width, 2 * width, rng=rng)
        self.inp = Conv1d(channels, width, 3, padding=1, rng=rng)
        self.down1 = DBlock(width, 2 * width, rng)
        self.down2 = DBlock(2 * width, 2 * width, rng)
        self.mid = Conv1d(2 * width, 2 * width, 3, padding=1, rng=rng)
        self.up1 = UBlock(4 * width, 2 * width, rng)
        self.up2 = UBlock(4 * width, width, rng)
        self.out = Conv1d(2 * width, channels, 3, padding=1, rng=rng)

    def forward(self, x, t):
        length = x.shape[-1]
        temb = self.time1(Tensor(timestep_embedding(t, self.time_dim))).relu()
        h0 = self.inp(_pad_to(x, working_length(length, 2))) + temb.reshape(temb.shape[0], -1, 1)
        h1 = self.down1(h0)
        h2 = self.down2(h1)
        t2 = self.time2(temb)
        mid = self.mid(h2).leaky_relu(0.2) + t2.reshape(t2.shape[0], -1, 1)
        u1 = self.up1(concat([mid, h2], axis=1))
        u2 = self.up2(concat([u1, h1], axis=1))
        return self.out(concat([u2, h0], axis=1))[:, :, :length]


def diffusion_loss(noise, predicted):
    return F.mse_loss(predicted, noise)


class DiffusionGenerator(_SeriesGenerator):
    """DDPM with an epsilon-predicting 1D U-Net and ancestral sampling."""

    def __init__(self, epochs=100, batch_size=64, width=32, lr=1e-3, steps=100, beta_start=1e-4, beta_end=0.02, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.width = width
        self.lr = lr
        self.steps = steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.random_state = random_state

    def fit(self, X, y=None):
        X = self._record_shape(X)
        self.schedule_ = NoiseSchedule.linear(self.steps, self.beta_start, self.beta_end)
        rng = check_random_generator(self.random_state)
        self.denoiser_ = UNet1d(self.n_channels_, self.width, rng=rng)
        trainer = Trainer(
            self.denoiser_.parameters(), OptimConfig(lr=self.lr), self.epochs * steps_per_epoch(len(X), self.batch_size)
        )
        abar = self.schedule_.alpha_bars
        self.history_ = []
        for epoch in range(1, self.epochs + 1):
            losses = []
            for b, idx in enumerate(minibatches(len(X), self.batch_size, rng)):
                x0 = X[idx]
                t = rng.integers(0, self.schedule_.steps, len(idx))
                noise = rng.standard_normal(x0.shape)
                xt = q_sample(x0, abar[t], noise)
                loss = diffusion_loss(noise, self.denoiser_(Tensor(xt), t))
                losses.append(trainer.step(loss, f"diffusion epoch {epoch}, batch {b}"))
            self.history_.append(float(np.mean(losses)))
        return self

    def sample(self, n, random_state=None):
        check_is_fitted(self, "denoiser_")
        rng = check_random_generator(random_state)
        sched = self.schedule_
        betas, alphas, abar = sched.betas, sched.alphas, sched.alpha_bars
        x = rng.standard_normal((n, self.n_channels_, self.length_))
        with no_grad():
            for t in range(sched.steps - 1, -1, -1):
                eps = self.denoiser_(Tensor(x), np.full(n, t)).data
                x = (x - betas[t] / math.sqrt(1.0 - abar[t]) * eps) / math.sqrt(alphas[t])
                if t > 0:
                    x = x + math.sqrt(betas[t]) * rng.standard_normal(x.shape)
                check_finite(float(np.abs(x).max()), f"diffusion sampling step {t}")
        return x

    def networks(self):
        return {"denoiser": self.denoiser_}


GENERATORS = {
    "rw": RandomWalkGenerator,
    "sw": SinusoidalGenerator,
    "mg": MultivariateGaussianGenerator,
    "gan": GANGenerator,
    "vae": BetaVAEGenerator,
    "diff": DiffusionGenerator,
}


def make_generator(kind, **params):
    if kind not in GENERATORS:
        raise ValueError(f"unknown generator {kind!r}; choose from {GENERATOR_KINDS}")
    return GENERATORS[kind](**params)


def save_generator(path, generator):
    """Persist a fitted generator in the ``.npz`` checkpoint layout."""
    check_is_fitted(generator, "length_")
    kind = next(k for k, cls in GENERATORS.items() if type(generator) is cls)
    arrays = {}
    if kind == "mg":
        m = generator.model_
        arrays.update({"mg/mean_real": m.mean_real, "mg/var_real": m.var_real, "mg/mean_imag": m.mean_imag, "mg/var_imag": m.var_imag})
    if hasattr(generator, "networks"):
        for net_name, net in generator.networks().items():
            arrays.update({f"param/{net_name}.{k}": v for k, v in net.state_dict().items()})
    meta = {
        "kind": kind,
        "params": generator.get_params(),
        "n_channels": int(generator.n_channels_),
        "length": int(generator.length_),
    }
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_generator(path):
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        arrays = {k: archive[k].copy() for k in archive.files if k != "__meta__"}
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["params"].items()}
    gen = make_generator(meta["kind"], **params)
    gen.n_channels_, gen.length_ = meta["n_channels"], meta["length"]
    c, length = gen.n_channels_, gen.length_
    kind = meta["kind"]
    if kind == "mg":
        gen.model_ = MGModel(arrays["mg/mean_real"], arrays["mg/var_real"], arrays["mg/mean_imag"], arrays["mg/var_imag"], length)
    elif kind == "gan":
        gen._build(np.random.default_rng(0))
    elif kind == "vae":
        gen.encoder_ = ConvEncoder(c, length, gen.latent_dim, gen.width, n_heads=2, rng=0)
        gen.decoder_ = ConvDecoder(c, length, gen.latent_dim, gen.width, rng=0)
    elif kind == "diff":
        gen.schedule_ = NoiseSchedule.linear(gen.steps, gen.beta_start, gen.beta_end)
        gen.denoiser_ = UNet1d(c, gen.width, rng=0)
    if hasattr(gen, "networks"):
        for net_name, net in gen.networks().items():
            prefix = f"param/{net_name}."
            net.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    return gen
