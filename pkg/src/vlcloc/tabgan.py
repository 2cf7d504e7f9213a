"""Unconditional tabular GAN over coordinate-free spectra.

The generator maps Gaussian noise to 11 tanh outputs in a per-channel
[-1, 1] scaling of the training spectra; the discriminator emits a logit.
Training alternates one discriminator step and one non-saturating
generator step per batch.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .seeding import derive_seed, rng_for
from .spectra import ADC_MAX, CHANNELS, N_CHANNELS, Spectrum

log = logging.getLogger(__name__)

GAN_FORMAT_VERSION = 1


class GanError(RuntimeError):
    pass


@dataclass(frozen=True)
class GanConfig:
    latent_dim: int = 16
    generator_widths: tuple[int, ...] = (64, 64)
    discriminator_widths: tuple[int, ...] = (64, 64)
    epochs: int = 300
    batch_size: int = 64
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    beta1: float = 0.5
    heldout_fraction: float = 0.1
    moment_weight: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "generator_widths", tuple(int(w) for w in self.generator_widths))
        object.__setattr__(self, "discriminator_widths",
                           tuple(int(w) for w in self.discriminator_widths))
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if min(self.generator_widths + self.discriminator_widths, default=1) < 1:
            raise ValueError("layer widths must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.moment_weight < 0:
            raise ValueError("moment_weight must be >= 0")
        if not 0 < self.heldout_fraction < 1:
            raise ValueError("heldout_fraction must be in (0, 1)")


@dataclass(frozen=True)
class ChannelScaler:
    """Affine map of each channel's training range onto [-1, 1].

    Channels that are constant in the training data are flagged degenerate
    and always reproduce their constant.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @classmethod
    def fit(cls, X: np.ndarray) -> "ChannelScaler":
        return cls(tuple(X.min(axis=0).tolist()), tuple(X.max(axis=0).tolist()))

    @property
    def degenerate(self) -> np.ndarray:
        return np.asarray(self.hi) <= np.asarray(self.lo)

    def forward(self, X: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        span = np.where(self.degenerate, 1.0, hi - lo)
        return np.where(self.degenerate, 0.0, 2.0 * (X - lo) / span - 1.0)

    def inverse(self, Z: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.where(self.degenerate, lo, lo + (np.asarray(Z) + 1.0) * 0.5 * (hi - lo))


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    d_loss: float
    g_loss: float
    d_heldout_acc: float


@dataclass(frozen=True)
class GanModel:
    generator: nn.DenseNet
    discriminator: nn.DenseNet
    scaler: ChannelScaler
    config: GanConfig

    def __post_init__(self) -> None:
        if self.generator.layer_sizes[-1] != N_CHANNELS:
            raise GanError("generator must emit 11 channels")
        if self.discriminator.layer_sizes != (N_CHANNELS, *self.discriminator.layer_sizes[1:-1], 1):
            raise GanError("discriminator must map 11 channels to one logit")


def _heldout_accuracy(d: nn.DenseNet, real: np.ndarray, fake: np.ndarray) -> float:
    """Balanced accuracy: reals called real and fakes called fake, averaged."""
    lr, _ = nn.forward(d, real)
    lf, _ = nn.forward(d, fake)
    return 0.5 * (float(np.mean(lr[:, 0] > 0)) + float(np.mean(lf[:, 0] <= 0)))


def _moment_grad(fake: np.ndarray, real: np.ndarray) -> np.ndarray:
    """Gradient of sum_c (mean_f - mean_r)^2 + (std_f - std_r)^2 w.r.t. the fake batch.

    Pulls the generator's batch statistics towards the real batch, which keeps
    it from parking every sample on one mode.
    """
    n = len(fake)
    mf, mr = fake.mean(axis=0), real.mean(axis=0)
    sf, sr = fake.std(axis=0), real.std(axis=0)
    return 2.0 * (mf - mr) / n + 2.0 * (sf - sr) * (fake - mf) / (n * (sf + 1e-8))


def train_gan(spectra: Sequence[Spectrum] | np.ndarray,
              cfg: GanConfig) -> tuple[GanModel, list[EpochLog]]:
    X = np.asarray([s.channels for s in spectra] if not isinstance(spectra, np.ndarray)
                   else spectra, dtype=np.float64).reshape(-1, N_CHANNELS)
    if len(X) < 2 * cfg.batch_size:
        raise GanError(f"need at least {2 * cfg.batch_size} spectra, got {len(X)}")
    seed = cfg.seed
    perm = rng_for(seed, "heldout").permutation(len(X))
    n_held = max(1, int(round(cfg.heldout_fraction * len(X))))
    held, fit = X[perm[:n_held]], X[perm[n_held:]]
    if len(fit) < cfg.batch_size:
        raise GanError("too few spectra left after holding out the accuracy set")

    scaler = ChannelScaler.fit(fit)
    for c in np.flatnonzero(scaler.degenerate):
        log.warning("channel %s is constant (%s) in the training data; it will be "
                    "generated as that constant", CHANNELS[c], scaler.lo[c])
    R = scaler.forward(fit)
    H = scaler.forward(held)

    gen = nn.init_net((cfg.latent_dim, *cfg.generator_widths, N_CHANNELS), "relu", "tanh",
                      0.0, seed=derive_seed(seed, "init-g"))
    disc = nn.init_net((N_CHANNELS, *cfg.discriminator_widths, 1), "relu", "identity",
                       0.0, seed=derive_seed(seed, "init-d"))
    tg = nn.Trainer(gen, cfg.lr_g, beta1=cfg.beta1)
    td = nn.Trainer(disc, cfg.lr_d, beta1=cfg.beta1)
    rng = rng_for(seed, "train")
    eval_rng = rng_for(seed, "eval")

    history: list[EpochLog] = []
    n, bs = len(R), cfg.batch_size
    ones = np.ones((bs, 1))
    zeros = np.zeros((bs, 1))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        d_losses, g_losses = [], []
        # drop the ragged tail so every step sees a full batch
        for b in range(n // bs):
            real = R[order[b * bs:(b + 1) * bs]]

            z = rng.standard_normal((bs, cfg.latent_dim))
            fake, _ = nn.forward(tg.net, z)
            out_r, cache_r = nn.forward(td.net, real)
            out_f, cache_f = nn.forward(td.net, fake)
            lr_, gr = nn.bce_with_logits(out_r, ones)
            lf_, gf = nn.bce_with_logits(out_f, zeros)
            d_loss = lr_ + lf_
            g_real = nn.backward(td.net, cache_r, gr)
            g_fake = nn.backward(td.net, cache_f, gf)
            td.update(nn.Grads(tuple(a + b_ for a, b_ in zip(g_real.weights, g_fake.weights)),
                               tuple(a + b_ for a, b_ in zip(g_real.biases, g_fake.biases)),
                               g_real.inputs))

            z = rng.standard_normal((bs, cfg.latent_dim))
            fake, cache_g = nn.forward(tg.net, z)
            out, cache_d = nn.forward(td.net, fake)
            g_loss, gd = nn.bce_with_logits(out, ones)  # non-saturating: maximise log D(G(z))
            grad_fake = nn.backward(td.net, cache_d, gd).inputs
            if cfg.moment_weight > 0:
                grad_fake = grad_fake + cfg.moment_weight * _moment_grad(fake, real)
            tg.update(nn.backward(tg.net, cache_g, grad_fake))

            if not (math.isfinite(d_loss) and math.isfinite(g_loss)):
                raise GanError(f"non-finite loss at epoch {epoch}, batch {b}")
            d_losses.append(d_loss)
            g_losses.append(g_loss)

        z = eval_rng.standard_normal((len(H), cfg.latent_dim))
        fake, _ = nn.forward(tg.net, z)
        acc = _heldout_accuracy(td.net, H, fake)
        history.append(EpochLog(epoch, float(np.mean(d_losses)), float(np.mean(g_losses)), acc))
        if epoch % 50 == 0 or epoch == cfg.epochs - 1:
            log.info("gan epoch %d: d_loss=%.4f g_loss=%.4f d_heldout_acc=%.3f",
                     epoch, history[-1].d_loss, history[-1].g_loss, acc)
    return GanModel(tg.snapshot(), td.snapshot(), scaler, cfg), history


def sample_array(m: GanModel, n: int, seed: int) -> np.ndarray:
    """``n`` generated spectra as an (n, 11) array of rounded, clamped counts."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return np.zeros((0, N_CHANNELS))
    z = np.random.default_rng(seed).standard_normal((n, m.generator.layer_sizes[0]))
    out, _ = nn.forward(m.generator, z)
    return np.rint(np.clip(m.scaler.inverse(out), 0.0, ADC_MAX))


def sample(m: GanModel, n: int, seed: int) -> list[Spectrum]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [Spectrum.from_array(r) for r in sample_array(m, n, seed)]


def gan_to_dict(m: GanModel) -> dict:
    cfg = asdict(m.config)
    return {
        "format_version": GAN_FORMAT_VERSION,
        "kind": "gan",
        "generator": nn.net_to_dict(m.generator),
        "discriminator": nn.net_to_dict(m.discriminator),
        "scaler": {"min": list(m.scaler.lo), "max": list(m.scaler.hi)},
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
    }


def gan_from_dict(d: dict) -> GanModel:
    if d.get("format_version") != GAN_FORMAT_VERSION or d.get("kind") != "gan":
        raise ValueError("not a GAN model document")
    return GanModel(nn.net_from_dict(d["generator"]), nn.net_from_dict(d["discriminator"]),
                    ChannelScaler(tuple(d["scaler"]["min"]), tuple(d["scaler"]["max"])),
                    GanConfig(**d["config"]))


def save_gan(m: GanModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(gan_to_dict(m)) + "\n", encoding="utf-8")


def load_gan(path: str | Path) -> GanModel:
    return gan_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_training_log(history: Sequence[EpochLog], path: str | Path) -> None:
    lines = ["epoch,d_loss,g_loss,d_heldout_acc"]
    lines += [f"{h.epoch},{h.d_loss!r},{h.g_loss!r},{h.d_heldout_acc!r}" for h in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
