"""Position regression from spectra: scaling, splitting, training, search, prediction."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .seeding import derive_seed, rng_for
from .spectra import CHANNELS, N_CHANNELS, Dataset, LabeledSample, Position, Spectrum

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class FeatureScaler:
    """Per-channel min-max scaling fitted on the training split."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @classmethod
    def fit(cls, X: np.ndarray, exclude: Sequence[str] = ()) -> "FeatureScaler":
        """Excluded channels get a zero range, so they always transform to 0."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) == 0:
            raise TrainingError("cannot fit a scaler on no data")
        lo, hi = X.min(axis=0), X.max(axis=0)
        for name in exclude:
            c = CHANNELS.index(name)
            lo[c] = hi[c] = 0.0
        return cls(tuple(lo.tolist()), tuple(hi.tolist()))

    def transform(self, X: np.ndarray) -> np.ndarray:
        lo = np.asarray(self.lo)
        span = np.asarray(self.hi) - lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (np.asarray(X, dtype=np.float64) - lo) / safe, 0.0)


@dataclass(frozen=True)
class CoordScale:
    """Maps cm to [0, 1]^2 using the room bounding box."""

    origin: tuple[float, float]
    span: tuple[float, float]

    @classmethod
    def from_bbox(cls, bbox: Sequence[float]) -> "CoordScale":
        xmin, ymin, xmax, ymax = bbox
        return cls((float(xmin), float(ymin)), (float(xmax - xmin), float(ymax - ymin)))

    def normalize(self, P: np.ndarray) -> np.ndarray:
        return (np.asarray(P, dtype=np.float64) - np.asarray(self.origin)) / np.asarray(self.span)

    def denormalize(self, Y: np.ndarray) -> np.ndarray:
        return np.asarray(Y, dtype=np.float64) * np.asarray(self.span) + np.asarray(self.origin)


@dataclass(frozen=True)
class HyperParams:
    hidden_layers: tuple[int, ...] = (128, 128)
    dropout_p: float = 0.1
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 500
    patience: int = 25

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if not self.hidden_layers or min(self.hidden_layers) < 1:
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden_layers}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("patience, max_epochs and batch_size must be >= 1")
        if not 0 <= self.dropout_p < 1:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


@dataclass(frozen=True)
class TrainedLocalizer:
    net: nn.DenseNet
    scaler: FeatureScaler
    coords: CoordScale
    seed: int
    hyperparams: HyperParams
    metrics: dict = field(default_factory=dict)
    val_curve: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.net.layer_sizes[0] != N_CHANNELS or self.net.layer_sizes[-1] != 2:
            raise TrainingError("localizer net must map 11 inputs to 2 outputs")


def split(ds: Dataset, fractions: Sequence[float] = (0.7, 0.15, 0.15),
          seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Stratified per reference point train/val/test split.

    Each point's samples are shuffled and cut by floor(n * fraction); the
    leftover samples go to train, then val, then test, in turn.
    """
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fr}")
    groups: dict[int, list[LabeledSample]] = {}
    for s in ds.samples:
        if s.rp_id is None:
            raise ValueError("split needs rp_id on every sample")
        groups.setdefault(s.rp_id, []).append(s)
    parts: list[list[LabeledSample]] = [[], [], []]
    for rp in sorted(groups):
        members = groups[rp]
        if len(members) < 3:
            raise ValueError(f"reference point {rp} has {len(members)} samples; need >= 3")
        n = len(members)
        counts = [int(math.floor(n * f + 1e-9)) for f in fr]
        k = 0
        while sum(counts) < n:
            if fr[k % 3] > 0:
                counts[k % 3] += 1
            k += 1
        order = rng_for(seed, "split", rp).permutation(n)
        start = 0
        for i, c in enumerate(counts):
            parts[i].extend(members[j] for j in order[start:start + c])
            start += c
    return tuple(Dataset(tuple(p), ds.provenance) for p in parts)  # type: ignore[return-value]


def _mean_error_cm(pred_cm: np.ndarray, true_cm: np.ndarray) -> float:
    return float(np.mean(np.hypot(*(pred_cm - true_cm).T)))


def train(train_ds: Dataset, val_ds: Dataset, hp: HyperParams, seed: int,
          bbox: Sequence[float] | None = None, exclude: Sequence[str] = ()) -> TrainedLocalizer:
    """Fit a localizer with Adam, minibatch MSE on normalized coordinates and early stopping.

    ``bbox`` (xmin, ymin, xmax, ymax) fixes the coordinate normalization;
    by default the training positions' bounding box is used.
    """
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise TrainingError("train and validation sets must be non-empty")
    X = train_ds.features()
    scaler = FeatureScaler.fit(X, exclude)
    P = train_ds.positions()
    if bbox is None:
        bbox = (*P.min(axis=0), *P.max(axis=0))
    coords = CoordScale.from_bbox(bbox)
    if min(coords.span) <= 0:
        # degenerate extent: give it 1 cm so normalization stays finite
        coords = CoordScale(coords.origin, tuple(s if s > 0 else 1.0 for s in coords.span))
    Xs = scaler.transform(X)
    Y = coords.normalize(P)
    Xv = scaler.transform(val_ds.features())
    Pv = val_ds.positions()

    net = nn.init_net((N_CHANNELS, *hp.hidden_layers, 2), "relu", "identity",
                      hp.dropout_p, seed=derive_seed(seed, "init"))
    trainer = nn.Trainer(net, hp.lr)
    shuffle_rng = rng_for(seed, "shuffle")
    dropout_rng = rng_for(seed, "dropout")

    best_err = math.inf
    best_net = trainer.snapshot()
    best_epoch = -1
    curve: list[float] = []
    n = len(Xs)
    for epoch in range(hp.max_epochs):
        order = shuffle_rng.permutation(n)
        for b, start in enumerate(range(0, n, hp.batch_size)):
            idx = order[start:start + hp.batch_size]
            out, cache = nn.forward(trainer.net, Xs[idx], dropout_rng)
            loss, grad = nn.mse_loss(out, Y[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            trainer.update(nn.backward(trainer.net, cache, grad))
        try:
            out, _ = nn.forward(trainer.net, Xv)
        except nn.NetError as exc:
            raise TrainingError(f"validation pass failed at epoch {epoch}: {exc}") from None
        err = _mean_error_cm(coords.denormalize(out), Pv)
        if not math.isfinite(err):
            raise TrainingError(f"non-finite validation error at epoch {epoch}")
        curve.append(err)
        if err < best_err:
            best_err, best_epoch = err, epoch
            best_net = trainer.snapshot()
        elif epoch - best_epoch >= hp.patience:
            break
    log.debug("trained %s: best val %.2f cm at epoch %d/%d", hp, best_err, best_epoch, len(curve))
    metrics = {"val_mean_euclidean_cm": best_err, "best_epoch": best_epoch,
               "epochs_run": len(curve)}
    return TrainedLocalizer(best_net, scaler, coords, seed, hp, metrics, tuple(curve))


def predict_many(m: TrainedLocalizer, X: np.ndarray) -> np.ndarray:
    """Eval-mode predictions in cm for an (n, 11) feature matrix."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, N_CHANNELS)
    if len(X) == 0:
        return np.zeros((0, 2))
    out, _ = nn.forward(m.net, m.scaler.transform(X))
    P = m.coords.denormalize(out)
    if not np.all(np.isfinite(P)):
        raise TrainingError("prediction is not finite")
    return P


def predict(m: TrainedLocalizer, s: Spectrum) -> Position:
    x, y = predict_many(m, s.to_array()[None, :])[0]
    return Position(x, y)


@dataclass(frozen=True)
class SearchSpace:
    depth: tuple[int, int] = (2, 4)
    widths: tuple[int, ...] = (32, 64, 128, 256)
    dropouts: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3)
    lr: tuple[float, float] = (1e-4, 1e-2)
    batch_sizes: tuple[int, ...] = (16, 32, 64)
    max_epochs: int = 500
    patience: int = 25

    def sample(self, rng: np.random.Generator) -> HyperParams:
        depth = int(rng.integers(self.depth[0], self.depth[1] + 1))
        widths = tuple(int(rng.choice(self.widths)) for _ in range(depth))
        dropout = float(rng.choice(self.dropouts))
        lr = float(math.exp(rng.uniform(math.log(self.lr[0]), math.log(self.lr[1]))))
        batch = int(rng.choice(self.batch_sizes))
        return HyperParams(widths, dropout, lr, batch, self.max_epochs, self.patience)


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    hyperparams: HyperParams
    val_err_cm: float
    error: str | None = None


def random_search(train_ds: Dataset, val_ds: Dataset, space: SearchSpace, n_trials: int,
                  seed: int, bbox: Sequence[float] | None = None, exclude: Sequence[str] = ()
                  ) -> tuple[HyperParams, TrainedLocalizer, list[TrialRecord]]:
    """Seeded random search; the lowest validation error wins, earlier trial on ties.

    Trial i draws its hyperparameters and training seed from streams keyed by
    (seed, i), so a longer search extends a shorter one with the same seed.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    best: tuple[float, int, TrainedLocalizer] | None = None
    records = []
    for i in range(n_trials):
        hp = space.sample(rng_for(seed, "trial-hp", i))
        try:
            model = train(train_ds, val_ds, hp, derive_seed(seed, "trial-train", i), bbox,
                          exclude)
        except (TrainingError, nn.NetError) as exc:
            log.warning("trial %d failed: %s", i, exc)
            records.append(TrialRecord(i, hp, math.nan, str(exc)))
            continue
        err = model.metrics["val_mean_euclidean_cm"]
        records.append(TrialRecord(i, hp, err))
        log.info("trial %d: layers=%s dropout=%s lr=%.2e batch=%d -> %.2f cm",
                 i, hp.hidden_layers, hp.dropout_p, hp.lr, hp.batch_size, err)
        if best is None or err < best[0]:
            best = (err, i, model)
    if best is None:
        raise TrainingError("every search trial failed")
    return best[2].hyperparams, best[2], records


def write_trial_log(records: Sequence[TrialRecord], path: str | Path) -> None:
    lines = ["trial,layers,dropout,lr,batch,val_err_cm"]
    for r in records:
        hp = r.hyperparams
        lines.append(",".join([str(r.trial), "-".join(map(str, hp.hidden_layers)),
                               repr(hp.dropout_p), repr(hp.lr), str(hp.batch_size),
                               repr(float(r.val_err_cm))]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def localizer_to_dict(m: TrainedLocalizer) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "localizer",
        "net": nn.net_to_dict(m.net),
        "scaler": {"min": list(m.scaler.lo), "max": list(m.scaler.hi)},
        "coords": {"origin": list(m.coords.origin), "span": list(m.coords.span)},
        "seed": m.seed,
        "hyperparams": asdict(m.hyperparams),
        "metrics": m.metrics,
        "val_curve": list(m.val_curve),
    }


def localizer_from_dict(d: dict) -> TrainedLocalizer:
    if d.get("format_version") != MODEL_FORMAT_VERSION or d.get("kind") != "localizer":
        raise ValueError("not a localizer model document")
    hp = d["hyperparams"]
    return TrainedLocalizer(
        nn.net_from_dict(d["net"]),
        FeatureScaler(tuple(d["scaler"]["min"]), tuple(d["scaler"]["max"])),
        CoordScale(tuple(d["coords"]["origin"]), tuple(d["coords"]["span"])),
        int(d["seed"]),
        HyperParams(tuple(hp["hidden_layers"]), hp["dropout_p"], hp["lr"], hp["batch_size"],
                    hp["max_epochs"], hp["patience"]),
        dict(d.get("metrics", {})),
        tuple(d.get("val_curve", ())),
    )


def save_localizer(m: TrainedLocalizer, path: str | Path) -> None:
    Path(path).write_text(json.dumps(localizer_to_dict(m)) + "\n", encoding="utf-8")


def load_localizer(path: str | Path) -> TrainedLocalizer:
    return localizer_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
