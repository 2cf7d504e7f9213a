"""Spectral fingerprint data model, canonical ordering and CSV persistence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CHANNELS: tuple[str, ...] = (
    "F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8", "Clear", "NIR", "Flicker",
)
N_CHANNELS = len(CHANNELS)
F_CHANNELS = slice(0, 8)
FLICKER = CHANNELS.index("Flicker")
ADC_MAX = 65535.0

CSV_HEADER: tuple[str, ...] = CHANNELS + ("x", "y", "rp_id", "seq")
SOURCE_COLUMN = "source"


class SpectrumError(ValueError):
    """Invalid spectrum, dataset or CSV content."""


class Provenance(str, Enum):
    MEASURED = "measured"
    SIMULATED = "simulated"
    SYNTHETIC = "synthetic"
    MIXED = "synthetic-mixed"


@dataclass(frozen=True)
class Spectrum:
    """One 11-channel sensor reading in canonical channel order."""

    channels: tuple[float, ...]

    def __post_init__(self) -> None:
        values = tuple(float(v) for v in self.channels)
        if len(values) != N_CHANNELS:
            raise SpectrumError(f"spectrum needs {N_CHANNELS} channels, got {len(values)}")
        for name, v in zip(CHANNELS, values):
            if not math.isfinite(v):
                raise SpectrumError(f"channel {name} is not finite: {v!r}")
            if v < 0:
                raise SpectrumError(f"channel {name} is negative: {v!r}")
            if v > ADC_MAX:
                raise SpectrumError(f"channel {name} exceeds ADC ceiling: {v!r}")
        object.__setattr__(self, "channels", values)

    @classmethod
    def from_array(cls, arr: Sequence[float] | np.ndarray) -> "Spectrum":
        return cls(tuple(float(v) for v in arr))

    def to_array(self) -> np.ndarray:
        return np.asarray(self.channels, dtype=np.float64)

    def __getitem__(self, name: str) -> float:
        return self.channels[CHANNELS.index(name)]


@dataclass(frozen=True)
class Position:
    x: float
    y: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise SpectrumError(f"position must be finite, got ({self.x}, {self.y})")

    def distance(self, other: "Position") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class LabeledSample:
    spectrum: Spectrum
    position: Position
    rp_id: int | None = None
    seq: int = 0
    source: str | None = None

    def __post_init__(self) -> None:
        if self.seq < 0:
            raise SpectrumError(f"seq must be >= 0, got {self.seq}")
        if self.rp_id is not None and self.rp_id < 0:
            raise SpectrumError(f"rp_id must be >= 0, got {self.rp_id}")

    def sort_key(self) -> tuple:
        rp = -1 if self.rp_id is None else self.rp_id
        return (self.position.x, self.position.y, rp, self.seq,
                self.source or "", self.spectrum.channels)


def canonical_order(samples: Iterable[LabeledSample]) -> tuple[LabeledSample, ...]:
    """Sort ascending by (x, y, rp_id, seq); remaining fields only break exact ties."""
    return tuple(sorted(samples, key=LabeledSample.sort_key))


@dataclass(frozen=True)
class Dataset:
    samples: tuple[LabeledSample, ...] = ()
    provenance: Provenance = Provenance.MEASURED
    channel_names: tuple[str, ...] = field(default=CHANNELS)

    def __post_init__(self) -> None:
        if tuple(self.channel_names) != CHANNELS:
            raise SpectrumError(f"channel names must be {CHANNELS}")
        object.__setattr__(self, "samples", canonical_order(self.samples))
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def features(self) -> np.ndarray:
        """(n, 11) matrix of channel values."""
        if not self.samples:
            return np.zeros((0, N_CHANNELS))
        return np.array([s.spectrum.channels for s in self.samples], dtype=np.float64)

    def positions(self) -> np.ndarray:
        """(n, 2) matrix of x, y in cm."""
        if not self.samples:
            return np.zeros((0, 2))
        return np.array([(s.position.x, s.position.y) for s in self.samples], dtype=np.float64)

    def rp_ids(self) -> list[int | None]:
        return [s.rp_id for s in self.samples]

    @property
    def has_source(self) -> bool:
        return any(s.source is not None for s in self.samples)


def _fmt(v: float) -> str:
    # repr is the shortest string that round-trips a 64-bit float
    return repr(float(v))


def save_csv(ds: Dataset, path: str | Path) -> None:
    """Write ``ds`` in canonical order; ``load_csv`` reproduces it exactly."""
    header = list(CSV_HEADER)
    with_source = ds.has_source
    if with_source:
        header.append(SOURCE_COLUMN)
    lines = [",".join(header)]
    for s in ds.samples:
        row = [_fmt(v) for v in s.spectrum.channels]
        row += [_fmt(s.position.x), _fmt(s.position.y),
                "" if s.rp_id is None else str(s.rp_id), str(s.seq)]
        if with_source:
            row.append(s.source or "")
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_csv(path: str | Path, provenance: Provenance | str = Provenance.MEASURED) -> Dataset:
    """Parse a fingerprint CSV and return it in canonical order.

    Errors carry the 1-based file line number and the offending column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SpectrumError(f"{path}: empty file, header row missing") from None
        header = [h.strip() for h in header]
        allowed = set(CSV_HEADER) | {SOURCE_COLUMN}
        unknown = [h for h in header if h not in allowed]
        if unknown:
            raise SpectrumError(f"{path}: unknown header column(s) {unknown}")
        missing = [h for h in CHANNELS + ("x", "y") if h not in header]
        if missing:
            raise SpectrumError(f"{path}: missing header column(s) {missing}")
        if len(set(header)) != len(header):
            raise SpectrumError(f"{path}: duplicate header columns")
        col = {h: i for i, h in enumerate(header)}

        samples = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SpectrumError(
                    f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")

            def num(name: str) -> float:
                cell = row[col[name]]
                try:
                    return float(cell)
                except ValueError:
                    raise SpectrumError(
                        f"{path}: row {lineno}, column {name}: non-numeric value {cell!r}"
                    ) from None

            values = []
            for name in CHANNELS:
                v = num(name)
                if not math.isfinite(v) or v < 0 or v > ADC_MAX:
                    raise SpectrumError(
                        f"{path}: row {lineno}, column {name}: invalid intensity {v!r}")
                values.append(v)
            x, y = num("x"), num("y")
            if not (math.isfinite(x) and math.isfinite(y)):
                raise SpectrumError(f"{path}: row {lineno}: non-finite position")

            rp_id = None
            if "rp_id" in col and row[col["rp_id"]].strip() != "":
                rp_id = _int_cell(path, lineno, "rp_id", row[col["rp_id"]])
            seq = 0
            if "seq" in col:
                seq = _int_cell(path, lineno, "seq", row[col["seq"]])
            source = None
            if SOURCE_COLUMN in col and row[col[SOURCE_COLUMN]] != "":
                source = row[col[SOURCE_COLUMN]]
            try:
                samples.append(LabeledSample(Spectrum(tuple(values)), Position(x, y),
                                             rp_id, seq, source))
            except SpectrumError as exc:
                raise SpectrumError(f"{path}: row {lineno}: {exc}") from None
    return Dataset(tuple(samples), provenance)


def _int_cell(path, lineno: int, name: str, cell: str) -> int:
    try:
        return int(cell)
    except ValueError:
        raise SpectrumError(
            f"{path}: row {lineno}, column {name}: expected integer, got {cell!r}") from None


def strip_coordinates(ds: Dataset) -> list[Spectrum]:
    """Spectra only, in canonical order."""
    return [s.spectrum for s in ds.samples]


def mean_spectrum(spectra: Sequence[Spectrum]) -> Spectrum:
    if len(spectra) == 0:
        raise SpectrumError("mean_spectrum needs at least one spectrum")
    arr = np.array([s.channels for s in spectra], dtype=np.float64)
    # sorting each column makes the sum independent of input order
    return Spectrum.from_array(np.sort(arr, axis=0).sum(axis=0) / len(spectra))


def pattern_distinctness(a: Spectrum, b: Spectrum) -> float:
    """Cosine distance between the F1-F8 band profiles, in [0, 2].

    Returns 0 when either profile is all zero.
    """
    u = a.to_array()[F_CHANNELS]
    v = b.to_array()[F_CHANNELS]
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    cos = float(np.dot(u, v) / (nu * nv))
    return 1.0 - min(1.0, max(-1.0, cos))


def normalize_to_anchor(ds: Dataset, anchor_ref: Spectrum, anchor_now: Spectrum) -> Dataset:
    """Rescale every sample by the per-channel ratio anchor_ref / anchor_now.

    Flicker is a modulation flag rather than an intensity and passes through
    unscaled. Values pushed past the ADC ceiling raise instead of clamping.
    """
    ref = anchor_ref.to_array()
    now = anchor_now.to_array()
    ratio = np.ones(N_CHANNELS)
    for c in range(N_CHANNELS):
        if c == FLICKER:
            continue
        if now[c] == 0:
            raise SpectrumError(f"anchor_now channel {CHANNELS[c]} is zero; cannot scale")
        ratio[c] = ref[c] / now[c]
    out = []
    for s in ds.samples:
        scaled = s.spectrum.to_array() * ratio
        bad = np.flatnonzero(~np.isfinite(scaled) | (scaled > ADC_MAX))
        if bad.size:
            raise SpectrumError(
                f"normalized channel {CHANNELS[bad[0]]} out of range ({scaled[bad[0]]!r}) "
                f"at position ({s.position.x}, {s.position.y}) seq {s.seq}")
        out.append(LabeledSample(Spectrum.from_array(scaled), s.position, s.rp_id, s.seq, s.source))
    return Dataset(tuple(out), ds.provenance)
