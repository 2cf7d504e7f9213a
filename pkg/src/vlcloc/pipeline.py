"""Baseline training, GAN augmentation, pseudo-labeling, retraining and paired evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import localizer as loc
from . import report as rpt
from . import tabgan
from .config import RunConfig
from .geometry import RoomPolygon, contains_many
from .seeding import derive_seed, rng_for
from .simlab import generate_corpus
from .spectra import (CHANNELS, Dataset, LabeledSample, Position, Provenance, Spectrum,
                      load_csv, save_csv, strip_coordinates)

log = logging.getLogger(__name__)

RESULT_SCHEMA_VERSION = 1

# fixed stage indices for seed derivation; a stage re-run alone reuses its index
STAGE_CORPUS = 0
STAGE_SPLIT = 1
STAGE_STRESS = 2
STAGE_SEARCH = 3
STAGE_GAN = 4
STAGE_SAMPLE = 5


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class AugmentationReport:
    generated: int
    discarded_oob: int
    kept: int
    density: tuple[tuple[int, ...], ...]  # rows run south to north
    grid_origin: tuple[float, float]
    cell_cm: float

    def __post_init__(self) -> None:
        if self.generated != self.discarded_oob + self.kept:
            raise ValueError("generated must equal discarded_oob + kept")
        if sum(map(sum, self.density)) != self.kept:
            raise ValueError("density grid total must equal kept")


MAX_GRID_CELLS = 1_000_000


def grid_cell(bbox: Sequence[float], cell_cm: float) -> float:
    """``cell_cm``, widened by powers of two until the grid has at most MAX_GRID_CELLS cells."""
    xmin, ymin, xmax, ymax = bbox
    cell = float(cell_cm)
    while math.ceil((xmax - xmin) / cell) * math.ceil((ymax - ymin) / cell) > MAX_GRID_CELLS:
        cell *= 2.0
    return cell


def density_grid(points: np.ndarray, bbox: Sequence[float],
                 cell_cm: float) -> tuple[tuple[tuple[int, ...], ...], tuple[float, float]]:
    """Counts per ``cell_cm`` square over ``bbox``; rows run south to north."""
    xmin, ymin, xmax, ymax = bbox
    if cell_cm <= 0:
        raise ValueError("cell_cm must be positive")
    nx = max(1, int(math.ceil((xmax - xmin) / cell_cm)))
    ny = max(1, int(math.ceil((ymax - ymin) / cell_cm)))
    grid = np.zeros((ny, nx), dtype=np.int64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        ix = np.clip(np.floor((pts[:, 0] - xmin) / cell_cm).astype(int), 0, nx - 1)
        iy = np.clip(np.floor((pts[:, 1] - ymin) / cell_cm).astype(int), 0, ny - 1)
        np.add.at(grid, (iy, ix), 1)
    return tuple(tuple(int(v) for v in row) for row in grid), (float(xmin), float(ymin))


def pseudo_label(model: loc.TrainedLocalizer, room: RoomPolygon,
                 spectra: Sequence[Spectrum] | np.ndarray, cell_cm: float = 25.0
                 ) -> tuple[list[LabeledSample], AugmentationReport, np.ndarray]:
    """Label spectra with ``model`` and keep those landing inside ``room``.

    Returns the kept samples (no rp_id, seq in kept order), the bookkeeping
    report and every raw prediction, including discarded ones.
    """
    X = np.asarray([s.channels for s in spectra] if not isinstance(spectra, np.ndarray)
                   else spectra, dtype=np.float64).reshape(-1, len(CHANNELS))
    P = loc.predict_many(model, X)
    inside = contains_many(room, P) if len(P) else np.zeros(0, dtype=bool)
    kept = []
    for k, i in enumerate(np.flatnonzero(inside)):
        kept.append(LabeledSample(Spectrum.from_array(X[i]), Position(*P[i]), None, k, "synthetic"))
    cell = grid_cell(room.bbox(), cell_cm)
    if cell != cell_cm:
        log.warning("density grid cell widened from %s to %s cm for a large room", cell_cm, cell)
    grid, origin = density_grid(P[inside], room.bbox(), cell)
    report = AugmentationReport(len(X), int(len(X) - inside.sum()), int(inside.sum()),
                                grid, origin, cell)
    return kept, report, P


def mix(real: Dataset, pseudo: Sequence[LabeledSample]) -> Dataset:
    """Real and pseudo-labeled rows in one canonical dataset, tagged by source."""
    rows = [LabeledSample(s.spectrum, s.position, s.rp_id, s.seq, "measured") for s in real]
    rows += [LabeledSample(s.spectrum, s.position, s.rp_id, s.seq, "synthetic") for s in pseudo]
    return Dataset(tuple(rows), Provenance.MIXED)


def drop_region(ds: Dataset, region: Sequence[float], fraction: float, seed: int) -> Dataset:
    """Remove floor(fraction * n) randomly chosen samples lying in ``region`` (x0, y0, x1, y1)."""
    x0, y0, x1, y1 = region
    P = ds.positions()
    in_region = np.flatnonzero((P[:, 0] >= x0) & (P[:, 0] <= x1) & (P[:, 1] >= y0) & (P[:, 1] <= y1))
    n_drop = int(math.floor(fraction * len(in_region) + 1e-9))
    drop = set(rng_for(seed, "stress").permutation(in_region)[:n_drop].tolist())
    return Dataset(tuple(s for i, s in enumerate(ds.samples) if i not in drop), ds.provenance)


def row_key(s: LabeledSample) -> str:
    """CSV row text without the source column, for identity audits."""
    rp = "" if s.rp_id is None else str(s.rp_id)
    return ",".join([*(repr(v) for v in s.spectrum.channels), repr(s.position.x),
                     repr(s.position.y), rp, str(s.seq)])


def isolation_audit(test: Dataset, training_inputs: Sequence[Dataset],
                    gan_spectra: Sequence[Spectrum]) -> int:
    """Number of test rows that also appear in any training input."""
    test_rows = {row_key(s) for s in test}
    test_spectra = {s.spectrum.channels for s in test}
    overlap = set()
    for ds in training_inputs:
        overlap |= test_rows & {row_key(s) for s in ds}
    spectral = test_spectra & {s.channels for s in gan_spectra}
    return len(overlap) + len(spectral)


@dataclass
class PipelineResult:
    baseline: loc.TrainedLocalizer
    baseline_summary: rpt.ErrorSummary
    augmented: loc.TrainedLocalizer
    augmented_summary: rpt.ErrorSummary
    augmentation: AugmentationReport
    baseline_trials: list
    augmented_trials: list
    gan_log: list
    histograms: list
    test_overlap: int
    seed: int
    config: dict
    split_sizes: dict

    @property
    def relative_improvement(self) -> float:
        b = self.baseline_summary.mean_euclidean_cm
        return (b - self.augmented_summary.mean_euclidean_cm) / b if b > 0 else 0.0

    def summary_line(self) -> str:
        return (f"baseline_cm={self.baseline_summary.mean_euclidean_cm:.3f} "
                f"augmented_cm={self.augmented_summary.mean_euclidean_cm:.3f} "
                f"kept={self.augmentation.kept} discarded={self.augmentation.discarded_oob}")

    def to_dict(self) -> dict:
        def summary(s: rpt.ErrorSummary) -> dict:
            return {"mean_euclidean_cm": s.mean_euclidean_cm, "median_cm": s.median_cm,
                    "p90_cm": s.p90_cm, "n": s.n,
                    "per_rp": [{"rp_id": r, "mean_cm": m, "n": n} for r, m, n in s.per_rp]}

        def trials(records) -> list:
            return [{"trial": r.trial, "hyperparams": _hp_dict(r.hyperparams),
                     "val_err_cm": None if math.isnan(r.val_err_cm) else r.val_err_cm,
                     "error": r.error} for r in records]

        aug = self.augmentation
        return {
            "schema_version": RESULT_SCHEMA_VERSION,
            "seed": self.seed,
            "split_sizes": self.split_sizes,
            "baseline": {"test": summary(self.baseline_summary),
                         "hyperparams": _hp_dict(self.baseline.hyperparams),
                         "val_mean_euclidean_cm": self.baseline.metrics["val_mean_euclidean_cm"],
                         "trials": trials(self.baseline_trials)},
            "augmented": {"test": summary(self.augmented_summary),
                          "hyperparams": _hp_dict(self.augmented.hyperparams),
                          "val_mean_euclidean_cm": self.augmented.metrics["val_mean_euclidean_cm"],
                          "trials": trials(self.augmented_trials)},
            "relative_improvement": self.relative_improvement,
            "augmentation": {"generated": aug.generated, "discarded_oob": aug.discarded_oob,
                             "kept": aug.kept, "cell_cm": aug.cell_cm,
                             "grid_origin": list(aug.grid_origin),
                             "density": [list(r) for r in aug.density]},
            "gan": {"epochs": len(self.gan_log),
                    "final": asdict(self.gan_log[-1]) if self.gan_log else None,
                    "histograms": [{"channel": h.channel, "tv_distance": h.tv_distance,
                                    "wasserstein1": h.wasserstein1,
                                    "bins": len(h.real_counts)} for h in self.histograms]},
            "audit": {"test_overlap_rows": self.test_overlap, "shared_test_split": True},
            "layout_note": "reference-point layout is generated, not surveyed",
            "config": self.config,
        }


def _hp_dict(hp: loc.HyperParams) -> dict:
    d = asdict(hp)
    d["hidden_layers"] = list(hp.hidden_layers)
    return d


def _stage(name: str):
    def wrap(fn):
        def run(*args, **kwargs):
            log.info("stage %s", name)
            try:
                return fn(*args, **kwargs)
            except PipelineError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
                raise PipelineError(name, exc) from exc
        return run
    return wrap


def load_or_generate_corpus(cfg: RunConfig, seed: int) -> Dataset:
    if cfg.corpus_csv:
        return load_csv(cfg.corpus_csv)
    return generate_corpus(cfg.room, cfg.layout, cfg.lamps, cfg.sensor, cfg.protocol,
                           derive_seed(seed, STAGE_CORPUS))


def prepare_splits(cfg: RunConfig, corpus: Dataset, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    train, val, test = loc.split(corpus, cfg.split, derive_seed(seed, STAGE_SPLIT))
    if cfg.stress.enabled:
        train = drop_region(train, cfg.stress.region, cfg.stress.drop_fraction,
                            derive_seed(seed, STAGE_STRESS))
    return train, val, test


def search(cfg: RunConfig, train: Dataset, val: Dataset, seed: int):
    # both models share the search stream: identical data gives identical models
    return loc.random_search(train, val, cfg.search_space, cfg.n_trials,
                             derive_seed(seed, STAGE_SEARCH), cfg.room.bbox(),
                             cfg.exclude_channels)


def train_augmenter(cfg: RunConfig, train: Dataset, seed: int):
    gcfg = tabgan.GanConfig(**{**asdict(cfg.gan), "seed": derive_seed(seed, STAGE_GAN)})
    return tabgan.train_gan(strip_coordinates(train), gcfg)


def augment(cfg: RunConfig, model: loc.TrainedLocalizer, gan: tabgan.GanModel, seed: int):
    synth = tabgan.sample_array(gan, cfg.n_synthetic, derive_seed(seed, STAGE_SAMPLE))
    kept, report, raw = pseudo_label(model, cfg.room, synth, cfg.grid_cell_cm)
    return synth, kept, report, raw


def synthetic_dataset(synth: np.ndarray, raw_pred: np.ndarray) -> Dataset:
    """Every generated spectrum at its unfiltered pseudo-label position."""
    return Dataset(tuple(LabeledSample(Spectrum.from_array(x), Position(*p), None, i, "synthetic")
                         for i, (x, p) in enumerate(zip(synth, raw_pred))), Provenance.SYNTHETIC)


def run_pipeline(cfg: RunConfig, seed: int | None = None,
                 out_dir: str | Path | None = None) -> PipelineResult:
    """Run the full method; artifacts land in ``out_dir`` as each stage finishes."""
    seed = cfg.seed if seed is None else int(seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report").mkdir(exist_ok=True)

    def emit(name: str, writer, *args) -> None:
        if out is not None:
            writer(*args, out / name)

    corpus = _stage("corpus")(load_or_generate_corpus)(cfg, seed)
    emit("corpus.csv", save_csv, corpus)
    train, val, test = _stage("split")(prepare_splits)(cfg, corpus, seed)
    emit("train.csv", save_csv, train)
    emit("val.csv", save_csv, val)
    emit("test.csv", save_csv, test)

    _, baseline, base_trials = _stage("baseline")(search)(cfg, train, val, seed)
    emit("baseline.model.json", loc.save_localizer, baseline)
    emit("baseline_trials.csv", loc.write_trial_log, base_trials)

    gan, gan_log = _stage("gan")(train_augmenter)(cfg, train, seed)
    emit("gan.model.json", tabgan.save_gan, gan)
    emit("gan_log.csv", tabgan.write_training_log, gan_log)

    synth, kept, aug_report, raw = _stage("pseudo_label")(augment)(cfg, baseline, gan, seed)
    emit("synthetic.csv", save_csv, synthetic_dataset(synth, raw))
    emit("pseudo.csv", save_csv, Dataset(tuple(kept), Provenance.SYNTHETIC))
    mixed = _stage("mix")(mix)(train, kept)
    emit("mixed.csv", save_csv, mixed)

    _, augmented, aug_trials = _stage("retrain")(search)(cfg, mixed, val, seed)
    emit("augmented.model.json", loc.save_localizer, augmented)
    emit("augmented_trials.csv", loc.write_trial_log, aug_trials)

    def evaluate():
        b = rpt.error_summary(baseline, test)
        a = rpt.error_summary(augmented, test)
        train_spectra = strip_coordinates(train)
        hists = [rpt.histogram_distance(train_spectra, synth, c, cfg.hist_bins)
                 for c in CHANNELS] if len(synth) else []
        overlap = isolation_audit(test, [train, val, mixed], train_spectra)
        return b, a, hists, overlap

    b_sum, a_sum, hists, overlap = _stage("evaluate")(evaluate)()
    result = PipelineResult(baseline, b_sum, augmented, a_sum, aug_report, base_trials,
                            aug_trials, gan_log, hists, overlap, seed, cfg.to_dict(),
                            {"corpus": len(corpus), "train": len(train), "val": len(val),
                             "test": len(test), "mixed": len(mixed)})
    if out is not None:
        _stage("report")(write_report)(result, test, cfg.room, out / "report")
        (out / "result.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n",
                                         encoding="utf-8")
    return result


def write_report(result: PipelineResult, test: Dataset, room: RoomPolygon, report_dir: Path) -> None:
    report_dir.mkdir(parents=True, exist_ok=True)
    b, a = result.baseline_summary, result.augmented_summary
    rows = [("baseline_mean_euclidean_cm", b.mean_euclidean_cm), ("baseline_median_cm", b.median_cm),
            ("baseline_p90_cm", b.p90_cm),
            ("augmented_mean_euclidean_cm", a.mean_euclidean_cm), ("augmented_median_cm", a.median_cm),
            ("augmented_p90_cm", a.p90_cm), ("relative_improvement", result.relative_improvement),
            ("generated", result.augmentation.generated),
            ("discarded_oob", result.augmentation.discarded_oob),
            ("kept", result.augmentation.kept), ("test_n", b.n),
            ("hist_bins", len(result.histograms[0].real_counts) if result.histograms else 0)]
    rows += [(f"tv_{h.channel}", h.tv_distance) for h in result.histograms]
    rpt.write_summary_csv(rows, report_dir / "summary.csv")
    rpt.write_per_rp_csv(a, report_dir / "per_rp.csv")
    rpt.write_per_rp_csv(b, report_dir / "per_rp_baseline.csv")
    for h in result.histograms:
        rpt.write_histogram_csv(h, report_dir / f"hist_{h.channel}.csv")
    rpt.scatter_svg(result.augmented, test, room, report_dir / "scatter.svg")
    rpt.scatter_svg(result.baseline, test, room, report_dir / "scatter_baseline.svg")
    rpt.heatmap_svg(result.augmentation, room, report_dir / "heatmap.svg")
