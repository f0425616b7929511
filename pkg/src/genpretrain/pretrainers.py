"""Self-supervised objectives: TimeCLR, TS2Vec, MixingUp and TF-C.

Loss functions take tensors and return a scalar :class:`Tensor`; the
``*_step`` functions draw the views for one batch, run the model and return
the loss ready for ``backward``.
"""

from dataclasses import dataclass, field

import numpy as np

from .augmentations import (
    AugmentKind,
    AugmentParams,
    augment_batch,
    crop_pair,
    frequency_augment,
)
from .backbones import magnitude_spectrum
from .tensor import Tensor, concat
from .tensor import functional as F

PTM_KINDS = ("timeclr", "ts2vec", "mixingup", "tfc")


@dataclass(frozen=True)
class ContrastConfig:
    temperature: float = 0.1
    exclude_positive: bool = True
    ts2vec_max_levels: int = None
    ts2vec_min_overlap: int = 8
    mix_alpha: float = 0.2
    tfc_weights: tuple = (1.0, 1.0, 1.0)  # time, frequency, consistency
    tfc_jitter_sigma: float = 0.1
    tfc_remove_fraction: float = 0.1
    tfc_add_fraction: float = 0.1
    augment: AugmentParams = field(default_factory=AugmentParams)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not self.mix_alpha > 0:
            raise ValueError("mix_alpha must be > 0")
        if self.ts2vec_max_levels is not None and self.ts2vec_max_levels < 1:
            raise ValueError("ts2vec_max_levels must be >= 1")


def _positive_index(n):
    return np.concatenate([np.arange(n, 2 * n), np.arange(n)])


def nt_xent(h0, h1, tau=0.1, exclude_positive=True):
    """NT-Xent over cosine similarities, averaged over all 2N anchors.

    Row ``i`` of ``h0`` and row ``i`` of ``h1`` form a positive pair. The
    denominator of each anchor runs over every other feature in ``h0``/``h1``
    except the anchor itself and, with ``exclude_positive`` (default), its
    positive as well. ``exclude_positive=False`` gives the SimCLR denominator.
    """
    h0 = h0 if isinstance(h0, Tensor) else Tensor(h0)
    h1 = h1 if isinstance(h1, Tensor) else Tensor(h1)
    if not tau > 0:
        raise ValueError("temperature must be > 0")
    if h0.ndim != 2 or h0.shape != h1.shape:
        raise ValueError(f"expected two (N, d) batches of equal shape, got {h0.shape} and {h1.shape}")
    n = h0.shape[0]
    if n < 2:
        raise ValueError("nt_xent needs at least 2 pairs")
    z = concat([h0, h1], axis=0)
    sim = F.cosine_similarity_matrix(z, z) * (1.0 / tau)
    pos = _positive_index(n)
    anchors = np.arange(2 * n)
    excluded = np.eye(2 * n, dtype=bool)
    if exclude_positive:
        excluded[anchors, pos] = True
    masked = sim + np.where(excluded, -np.inf, 0.0)
    return (F.logsumexp(masked, axis=1) - sim[anchors, pos]).mean()


def _paired_contrast(z):
    """Mean -log softmax of the positive over rows of (G, 2M, d) where row m
    pairs with row m +/- M; similarity is the plain dot product."""
    m2 = z.shape[1]
    sim = z @ z.swapaxes(-1, -2)
    logp = F.log_softmax(sim + np.where(np.eye(m2, dtype=bool), -np.inf, 0.0), axis=-1)
    pos = _positive_index(m2 // 2)
    return -logp[:, np.arange(m2), pos].mean()


def instance_contrastive_loss(z0, z1):
    """At every time step, the same instance's other view is the positive and
    the other instances (both views) are negatives. Zero when N == 1."""
    if z0.shape[0] < 2:
        return None
    return _paired_contrast(concat([z0, z1], axis=0).transpose(1, 0, 2))


def temporal_contrastive_loss(z0, z1):
    """Within each instance, the same time step of the other view is the
    positive and the other time steps are negatives. Zero when T == 1."""
    if z0.shape[1] < 2:
        return None
    return _paired_contrast(concat([z0, z1], axis=1))


def ts2vec_loss(z0, z1, max_levels=None):
    """Hierarchical contrastive loss over aligned (N, T, d) representations.

    Each level adds the instance-wise and temporal terms (each skipped when
    degenerate); the time axis is then max-pooled by 2 until T == 1. The
    result is the mean over levels.
    """
    z0 = z0 if isinstance(z0, Tensor) else Tensor(z0)
    z1 = z1 if isinstance(z1, Tensor) else Tensor(z1)
    if z0.ndim != 3 or z0.shape != z1.shape:
        raise ValueError(f"expected two aligned (N, T, d) tensors, got {z0.shape} and {z1.shape}")
    if z0.shape[1] == 0:
        raise ValueError("the crops do not overlap")
    total, levels = None, 0
    while True:
        for term in (instance_contrastive_loss(z0, z1), temporal_contrastive_loss(z0, z1)):
            if term is not None:
                total = term if total is None else total + term
        levels += 1
        if z0.shape[1] == 1 or (max_levels is not None and levels >= max_levels):
            break
        z0 = F.max_pool1d(z0, 2, axis=1)
        z1 = F.max_pool1d(z1, 2, axis=1)
    if total is None:
        return Tensor(0.0)
    return total * (1.0 / levels)


@dataclass
class MixBatch:
    x_i: np.ndarray
    x_j: np.ndarray
    x_k: np.ndarray
    lam: np.ndarray


def derangement(n, rng):
    """Random permutation without fixed points (a random cyclic relabelling)."""
    if n < 2:
        raise ValueError("a derangement needs at least 2 elements")
    order = rng.permutation(n)
    perm = np.empty(n, dtype=np.int64)
    perm[order] = np.roll(order, -1)
    return perm


def mix_series(x_i, x_j, lam):
    lam = np.asarray(lam, dtype=np.float64).reshape((-1,) + (1,) * (np.ndim(x_i) - 1))
    return lam * x_i + (1.0 - lam) * x_j


def mixup_batch(batch, alpha, rng):
    """Pair each series with a different one and mix with lambda ~ Beta(alpha, alpha)."""
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) < 2:
        raise ValueError("mixing needs a batch of at least 2 series")
    x_j = batch[derangement(len(batch), rng)]
    lam = rng.beta(alpha, alpha, size=len(batch))
    return MixBatch(batch, x_j, mix_series(batch, x_j, lam), lam)


def mixingup_loss(proj_i, proj_j, proj_k, lam, tau=0.1):
    """Soft-target cross-entropy for predicting the mixing proportion.

    For mixed sample ``n`` the logits are its cosine similarities (over tau)
    to every ``proj_i`` and every ``proj_j`` row; the target puts ``lam[n]``
    on ``proj_i[n]`` and ``1 - lam[n]`` on ``proj_j[n]``.
    """
    proj_i, proj_j, proj_k = (p if isinstance(p, Tensor) else Tensor(p) for p in (proj_i, proj_j, proj_k))
    n = proj_k.shape[0]
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    zk = F.l2_normalize(proj_k)
    logits = concat([zk @ F.l2_normalize(proj_i).T, zk @ F.l2_normalize(proj_j).T], axis=1) * (1.0 / tau)
    targets = np.concatenate([np.diag(lam), np.diag(1.0 - lam)], axis=1)
    return -(F.log_softmax(logits, axis=1) * targets).sum(axis=1).mean()


def tfc_loss(h_t, h_t_aug, h_f, h_f_aug, z_t, z_t_aug, z_f, z_f_aug, tau=0.1, weights=(1.0, 1.0, 1.0), exclude_positive=True):
    """Time-domain + frequency-domain contrast plus time-frequency consistency.

    The consistency term pulls the (time, frequency) projections of the same
    series together relative to the three pairings involving an augmented
    view, following the reference TF-C formulation.
    """

    def xent(a, b):
        return nt_xent(a, b, tau, exclude_positive)

    w_time, w_freq, w_cons = weights
    l_tf = xent(z_t, z_f)
    consistency = (
        (1.0 + l_tf - xent(z_t, z_f_aug))
        + (1.0 + l_tf - xent(z_t_aug, z_f))
        + (1.0 + l_tf - xent(z_t_aug, z_f_aug))
    )
    return xent(h_t, h_t_aug) * w_time + xent(h_f, h_f_aug) * w_freq + consistency * w_cons


# -- one pretraining step per method ----------------------------------------


def timeclr_step(batch, model, cfg, rng):
    """Two views, one randomly drawn augmentation per sample and view."""
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) < 2:
        raise ValueError("TimeCLR needs a batch of at least 2 series")
    x0 = augment_batch(batch, rng, cfg.augment)
    x1 = augment_batch(batch, rng, cfg.augment)
    return nt_xent(model.project(x0), model.project(x1), cfg.temperature, cfg.exclude_positive)


def aligned_overlap(z0, z1, bounds, stride):
    """Slice two per-time-step outputs down to the steps covering the overlap."""
    offset = (bounds.overlap[0] - bounds.first[0]) // stride
    steps = -(-bounds.overlap_length // stride)
    return z0[:, offset : offset + steps, :], z1[:, :steps, :]


def ts2vec_step(batch, model, cfg, rng):
    batch = np.asarray(batch, dtype=np.float64)
    stride = model.backbone.spec.first_stride
    x0, x1, bounds = crop_pair(batch, rng, min_overlap=cfg.ts2vec_min_overlap, stride=stride)
    z0, z1 = aligned_overlap(model.project(x0), model.project(x1), bounds, stride)
    return ts2vec_loss(z0, z1, cfg.ts2vec_max_levels)


def mixingup_step(batch, model, cfg, rng):
    mb = mixup_batch(batch, cfg.mix_alpha, rng)
    return mixingup_loss(model.project(mb.x_i), model.project(mb.x_j), model.project(mb.x_k), mb.lam, cfg.temperature)


def tfc_step(batch, time_model, freq_model, cfg, rng):
    """Jitter in time, add/remove components in frequency, contrast both."""
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) < 2:
        raise ValueError("TF-C needs a batch of at least 2 series")
    jitter_params = cfg.augment.with_(jitter_sigma=cfg.tfc_jitter_sigma)
    x_t_aug = augment_batch(batch, rng, jitter_params, kind=AugmentKind.JITTER)
    x_f = magnitude_spectrum(batch)
    x_f_aug = frequency_augment(x_f, rng, cfg.tfc_remove_fraction, cfg.tfc_add_fraction)

    h_t, h_t_aug = time_model.embed(batch), time_model.embed(x_t_aug)
    h_f, h_f_aug = freq_model.embed(x_f), freq_model.embed(x_f_aug)
    project_t, project_f = time_model.heads.project, freq_model.heads.project
    return tfc_loss(
        h_t, h_t_aug, h_f, h_f_aug,
        project_t(h_t), project_t(h_t_aug), project_f(h_f), project_f(h_f_aug),
        cfg.temperature, cfg.tfc_weights, cfg.exclude_positive,
    )


def pretrain_step(ptm, batch, model, cfg, rng):
    """Dispatch one step of ``ptm`` on ``model`` (a DualDomainModel for TF-C)."""
    if ptm == "timeclr":
        return timeclr_step(batch, model, cfg, rng)
    if ptm == "ts2vec":
        return ts2vec_step(batch, model, cfg, rng)
    if ptm == "mixingup":
        return mixingup_step(batch, model, cfg, rng)
    if ptm == "tfc":
        return tfc_step(batch, model.time, model.freq, cfg, rng)
    raise ValueError(f"unknown pretraining method {ptm!r}")
