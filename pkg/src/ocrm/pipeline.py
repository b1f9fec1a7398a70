"""Two-stage training and inference.

Stage one trains encoder, decoder and (for adversarial arms) discriminator
jointly on ``lam * l_mse + loss_G``. Stage two freezes the networks, extracts
features of the training set and fits an SVDD sphere to them. A query is
scored by its SVDD score, or by its reconstruction error for the MSE arms;
in both conventions larger means more anomalous.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import svdd
from . import tensor as T
from .data import flip_batch
from .networks import Adam, Decoder, Discriminator, Encoder
from .tensor import Tensor

log = logging.getLogger(__name__)

ARMS = ("ae_svdd", "ae_mse", "ae_disc_svdd", "ae_disc_mse", "full")
ARM_LABELS = {
    "ae_svdd": "SVDD on autoencoder features",
    "ae_mse": "MSE on autoencoder features",
    "ae_disc_svdd": "SVDD on autoencoder features + discriminator",
    "ae_disc_mse": "MSE on autoencoder features + discriminator",
    "full": "SVDD on autoencoder augmented features + discriminator",
}
PROB_EPS = 1e-7


class TrainingDivergenceError(FloatingPointError):
    def __init__(self, msg, epoch=None, step=None):
        super().__init__(f"{msg} (epoch {epoch}, step {step})")
        self.epoch = epoch
        self.step = step


class MissingStageError(RuntimeError):
    """An SVDD arm was asked to score before its SVDD stage was fitted."""


def uses_discriminator(arm):
    return arm in ("ae_disc_svdd", "ae_disc_mse", "full")


def uses_svdd(arm):
    return arm in ("ae_svdd", "ae_disc_svdd", "full")


def training_arm(arm):
    """Arms differing only in scoring share one training run."""
    return {"ae_mse": "ae_svdd", "ae_disc_mse": "ae_disc_svdd"}.get(arm, arm)


@dataclass
class TrainConfig:
    lam: float = 1.0
    lr_generator: float = 2e-4
    lr_discriminator_ratio: float = 0.01
    batch_size: int = 64
    epochs: int = 50
    k: int = 256
    seed: int = 0
    arm: str = "full"
    c: float = 0.1
    kernel: str = "linear"
    gamma: float = 1.0
    svdd_tol: float = 1e-6
    channels: int = 1
    flip: bool = False
    recon_reduction: str = "sum"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")
        if not (self.lr_generator > 0 and self.lr_discriminator_ratio > 0):
            raise ValueError("learning rates must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 (batch norm)")
        if self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}; choose from {ARMS}")
        if self.recon_reduction not in ("sum", "mean"):
            raise ValueError("recon_reduction must be 'sum' or 'mean'")
        if self.epochs < 0 or self.k < 1:
            raise ValueError("epochs must be >= 0 and k >= 1")

    @property
    def disc_dim(self):
        return 2 * self.k if self.arm == "full" else self.k

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Networks:
    encoder: Encoder
    decoder: Decoder
    discriminator: Discriminator | None = None

    def train(self, mode=True):
        for net in (self.encoder, self.decoder, self.discriminator):
            if net is not None:
                net.train(mode)

    def eval(self):
        self.train(False)

    def state_dict(self):
        out = {}
        for prefix, net in (("encoder", self.encoder), ("decoder", self.decoder), ("discriminator", self.discriminator)):
            if net is not None:
                out.update({f"{prefix}.{k}": v for k, v in net.state_dict().items()})
        return out

    def load_state_dict(self, state):
        for prefix, net in (("encoder", self.encoder), ("decoder", self.decoder), ("discriminator", self.discriminator)):
            if net is not None:
                net.load_state_dict({k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")})


@dataclass
class TrainedModel:
    nets: Networks
    config: TrainConfig
    history: dict = field(default_factory=lambda: {"l_mse": [], "loss_G": [], "loss_D": []})

    def history_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "l_mse", "loss_G", "loss_D"])
        for i, row in enumerate(zip(self.history["l_mse"], self.history["loss_G"], self.history["loss_D"])):
            w.writerow([i] + [repr(float(v)) for v in row])
        return buf.getvalue()


@dataclass
class Detector:
    model: TrainedModel
    svdd: svdd.SvddModel | None = None


@dataclass
class AugmentedFeature:
    values: np.ndarray
    k: int

    def split(self):
        return self.values[: self.k], float(self.values[self.k])


def build_networks(config, seed_seq=None):
    """Encoder/decoder and discriminator are drawn from separate streams so that
    every arm starts from the same autoencoder for a given seed."""
    seed_seq = seed_seq or np.random.SeedSequence(config.seed)
    ae_seq, disc_seq = seed_seq.spawn(2)
    ae_rng = np.random.default_rng(ae_seq)
    enc = Encoder(config.channels, config.k, ae_rng)
    dec = Decoder(config.channels, config.k, ae_rng)
    disc = Discriminator(config.disc_dim, np.random.default_rng(disc_seq)) if uses_discriminator(config.arm) else None
    return Networks(enc, dec, disc)


# ----------------------------------------------------------------- losses

def recon_error(x, xhat, reduction="mean"):
    """Squared difference between an image and its reconstruction, averaged
    over pixels (``"mean"``) or summed (``"sum"``, the squared L2 norm)."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.shape != xhat.shape:
        raise T.DimensionError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xhat))):
        raise ValueError("non-finite input to recon_error")
    d = x - xhat
    return float(np.sum(d * d) if reduction == "sum" else np.mean(d * d))


def per_sample_error(x, xhat, reduction="mean"):
    """Differentiable per-sample reconstruction error, shape [N]."""
    reduce = T.sum if reduction == "sum" else T.mean
    return reduce(T.square(T.sub(xhat, x)), axis=(1, 2, 3))


def augment(z, e):
    """Latent code followed by ``k`` copies of the reconstruction error."""
    z = np.asarray(z, dtype=np.float64)
    if e < 0:
        raise ValueError("reconstruction error must be non-negative")
    if not np.all(np.isfinite(z)):
        raise ValueError("latent code is not finite")
    return AugmentedFeature(np.concatenate([z, np.full(z.shape[0], float(e))]), z.shape[0])


def augment_batch(z, e):
    """Tensor version of :func:`augment` for ``z[N,k]`` and ``e[N]``; gradients
    flow into both halves."""
    n, k = z.shape
    rep = T.broadcast_to(T.reshape(e, (n, 1)), (n, k))
    return T.concat([z, rep], axis=1)


def augment_array(z, e):
    z = np.asarray(z, dtype=np.float64)
    return np.concatenate([z, np.repeat(np.asarray(e, dtype=np.float64)[:, None], z.shape[1], axis=1)], axis=1)


def sample_prior(n, dim, rng):
    if n < 1:
        raise ValueError("n must be >= 1")
    return rng.standard_normal((n, dim))


def _clamped_log(p):
    return T.log(T.clamp(p, PROB_EPS, 1.0 - PROB_EPS))


def gan_losses(disc, real, fake):
    """Discriminator loss and non-saturating generator loss.

    ``loss_D = -[mean log D(real) + mean log(1 - D(fake))]``,
    ``loss_G = -mean log D(fake)``.
    """
    real = real if isinstance(real, Tensor) else Tensor(real)
    fake = fake if isinstance(fake, Tensor) else Tensor(fake)
    d_real = disc(real)
    d_fake = disc(fake)
    loss_d = T.mul(T.add(T.mean(_clamped_log(d_real)), T.mean(_clamped_log(T.sub(1.0, d_fake)))), -1.0)
    loss_g = generator_loss_from_probs(d_fake)
    return loss_d, loss_g


def generator_loss_from_probs(d_fake):
    return T.mul(T.mean(_clamped_log(d_fake)), -1.0)


# --------------------------------------------------------------- training

@dataclass
class Optimizers:
    generator: Adam
    discriminator: Adam | None = None


def make_optimizers(nets, config):
    gen_params = {f"encoder.{k}": v for k, v in nets.encoder.parameters().items()}
    gen_params.update({f"decoder.{k}": v for k, v in nets.decoder.parameters().items()})
    opt_g = Adam(gen_params, config.lr_generator)
    opt_d = None
    if nets.discriminator is not None:
        opt_d = Adam(nets.discriminator.parameters(), config.lr_generator * config.lr_discriminator_ratio)
    return Optimizers(opt_g, opt_d)


def _finite(v, what, epoch, step):
    if not np.isfinite(v):
        raise TrainingDivergenceError(f"{what} became non-finite", epoch, step)
    return v


def train_step(batch, nets, opts, config, rng, epoch=None, step=None):
    """One alternating update. Returns ``(l_mse, loss_G, loss_D)``."""
    if len(batch) < 2:
        raise ValueError("batch must contain at least 2 samples")
    x = Tensor(batch)
    z = nets.encoder(x)
    xhat = nets.decoder(z)
    e = per_sample_error(x, xhat, config.recon_reduction)
    l_mse = T.mean(e)
    loss_g_val = loss_d_val = 0.0
    total = T.mul(l_mse, config.lam)

    if nets.discriminator is not None:
        disc = nets.discriminator
        fake = augment_batch(z, e) if config.arm == "full" else z
        real = sample_prior(len(batch), disc.dim, rng).astype(batch.dtype)
        loss_d, _ = gan_losses(disc, Tensor(real), fake.detach())
        loss_d_val = _finite(float(loss_d.data), "discriminator loss", epoch, step)
        opts.discriminator.zero_grad()
        T.backward(loss_d)
        opts.discriminator.step()

        loss_g = generator_loss_from_probs(disc(fake))
        loss_g_val = _finite(float(loss_g.data), "generator loss", epoch, step)
        total = T.add(total, loss_g)

    l_mse_val = _finite(float(l_mse.data), "reconstruction loss", epoch, step)
    opts.generator.zero_grad()
    T.backward(total)
    opts.generator.step()
    if nets.discriminator is not None:
        nets.discriminator.zero_grad()
    return l_mse_val, loss_g_val, loss_d_val


def _streams(seed):
    init, shuffle, prior, aug = np.random.SeedSequence(seed).spawn(4)
    return init, np.random.default_rng(shuffle), np.random.default_rng(prior), np.random.default_rng(aug)


def train(images, config, progress=None):
    """Stage one: fit the networks on in-class images ``[N,C,32,32]`` in [0,1]."""
    images = np.asarray(images, dtype=np.float32)
    if len(images) == 0:
        raise ValueError("empty training set")
    if images.shape[1:] != (config.channels, 32, 32):
        raise T.DimensionError(f"expected [N,{config.channels},32,32] images, got {images.shape}")
    init_seq, shuffle_rng, prior_rng, aug_rng = _streams(config.seed)
    nets = build_networks(config, init_seq)
    nets.train()
    opts = make_optimizers(nets, config)
    model = TrainedModel(nets, config)
    n = len(images)
    bs = config.batch_size
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(3)
        steps = 0
        for step, start in enumerate(range(0, n, bs)):
            idx = order[start:start + bs]
            if len(idx) < 2:
                continue
            batch = images[idx]
            if config.flip:
                batch = flip_batch(batch, aug_rng)
            sums += train_step(batch, nets, opts, config, prior_rng, epoch, step)
            steps += 1
        means = sums / max(steps, 1)
        for key, v in zip(("l_mse", "loss_G", "loss_D"), means):
            model.history[key].append(float(v))
        if progress is not None:
            progress(epoch, *means)
        log.info("epoch %d: l_mse=%.5f loss_G=%.4f loss_D=%.4f", epoch, *means)
    nets.eval()
    return model


# -------------------------------------------------------------- features

def latent_and_error(model, images, batch_size=500):
    """Eval-mode latent codes ``[N,k]`` and reconstruction errors ``[N]`` (float64)."""
    nets = model.nets
    nets.eval()
    images = np.asarray(images, dtype=np.float32)
    zs, es = [], []
    for start in range(0, len(images), batch_size):
        x = Tensor(images[start:start + batch_size])
        z = nets.encoder(x)
        xhat = nets.decoder(z)
        d = xhat.data.astype(np.float64) - x.data
        zs.append(z.data.astype(np.float64))
        sq = d * d
        es.append(sq.sum(axis=(1, 2, 3)) if model.config.recon_reduction == "sum" else sq.mean(axis=(1, 2, 3)))
    return np.concatenate(zs), np.concatenate(es)


def svdd_features(model, images):
    z, e = latent_and_error(model, images)
    if model.config.arm == "full":
        return augment_array(z, e)
    return z


def effective_c(c, n):
    return max(c, 1.0 / n)


def fit_svdd_stage(model, images):
    """Stage two: SVDD on the frozen model's features of the training set."""
    feats = svdd_features(model, images)
    cfg = model.config
    kernel = svdd.KernelSpec(cfg.kernel, cfg.gamma)
    return svdd.fit(feats, effective_c(cfg.c, len(feats)), kernel, cfg.svdd_tol)


def score_images(detector, images):
    """Anomaly scores for a batch of preprocessed images (higher = more anomalous)."""
    cfg = detector.model.config
    z, e = latent_and_error(detector.model, images)
    if not uses_svdd(cfg.arm):
        return e
    if detector.svdd is None:
        raise MissingStageError(f"arm {cfg.arm!r} needs a fitted SVDD stage before scoring")
    feats = augment_array(z, e) if cfg.arm == "full" else z
    return detector.svdd.score(feats)


def infer_score(detector, x):
    """Score a single preprocessed image ``[C,32,32]``."""
    return float(score_images(detector, np.asarray(x)[None])[0])


def config_dict(config):
    return asdict(config)
