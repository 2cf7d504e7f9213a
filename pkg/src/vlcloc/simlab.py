"""Synthetic lab: Lambertian lamps, a noisy counting sensor and the dwell/rate protocol.

Stands in for a measured fingerprint corpus. Every reading is a pure
function of (lamps, sensor, position, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import ReferenceLayout, RoomPolygon
from .seeding import derive_seed
from .spectra import (ADC_MAX, FLICKER, N_CHANNELS, Dataset, LabeledSample, Position,
                      Provenance, Spectrum)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class Lamp:
    """Point source facing straight down.

    ``emission`` holds per-channel radiant weights (counts * cm^2 at 1 cm).
    Its Flicker entry is the lamp's modulation tag and is not attenuated.
    """

    pos: tuple[float, float, float]
    emission: tuple[float, ...]
    lambert_order: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pos", tuple(float(v) for v in self.pos))
        object.__setattr__(self, "emission", tuple(float(v) for v in self.emission))
        if len(self.pos) != 3 or self.pos[2] <= 0:
            raise SimulationError(f"lamp needs (x, y, z) with z > 0, got {self.pos}")
        if len(self.emission) != N_CHANNELS or min(self.emission) < 0:
            raise SimulationError("lamp emission must be 11 non-negative weights")
        if self.lambert_order < 1:
            raise SimulationError(f"lambert_order must be >= 1, got {self.lambert_order}")


@dataclass(frozen=True)
class SensorModel:
    height_cm: float = 0.0
    noise_rel: float = 0.02
    ambient: tuple[float, ...] = (20.0,) * 10 + (0.0,)
    adc_max: float = ADC_MAX

    def __post_init__(self) -> None:
        object.__setattr__(self, "ambient", tuple(float(v) for v in self.ambient))
        if not 0 <= self.noise_rel < 1:
            raise SimulationError(f"noise_rel must be in [0, 1), got {self.noise_rel}")
        if len(self.ambient) != N_CHANNELS or min(self.ambient) < 0:
            raise SimulationError("ambient must be 11 non-negative counts")


@dataclass(frozen=True)
class Protocol:
    dwell_s: float = 30.0
    rate_hz: float = 4.0

    @property
    def samples_per_point(self) -> int:
        n = self.dwell_s * self.rate_hz
        if n < 1 or abs(n - round(n)) > 1e-9:
            raise SimulationError(f"dwell_s * rate_hz must be a positive integer, got {n}")
        return int(round(n))


# Relative band weights for F1..F8, Clear, NIR. Distinct shapes give each lamp
# a spectral signature; Flicker tags are small integers per lamp.
_WARM = (0.10, 0.18, 0.30, 0.45, 0.70, 0.95, 1.00, 0.85, 2.20, 0.60)
_COOL = (0.35, 0.95, 1.00, 0.70, 0.55, 0.45, 0.35, 0.25, 2.00, 0.15)
_NEUTRAL = (0.20, 0.50, 0.65, 0.80, 1.00, 0.80, 0.60, 0.40, 2.10, 0.30)
_AMBER = (0.05, 0.08, 0.12, 0.25, 0.60, 1.00, 0.90, 0.55, 1.80, 0.90)


_BAND_FLOOR = 0.3
_BROADBAND_GAIN = (1.0,) * 8 + (2.1, 0.8)


def _lamp_emission(shape: Sequence[float], scale: float = 1.2e8) -> tuple[float, ...]:
    # every lamp leaks at least 30% of its peak into each band; pure narrow-band
    # lamps make channel ranges so wide that per-point clusters never overlap
    peak = max(shape)
    return tuple(scale * g * (_BAND_FLOOR + (1 - _BAND_FLOOR) * w / peak)
                 for w, g in zip(shape, _BROADBAND_GAIN))


def default_lamps() -> list[Lamp]:
    """Four lamps over the left arm, right arm and the two halves of the base."""
    specs = [
        ((100.0, 600.0, 280.0), _WARM, 3.0),
        ((500.0, 600.0, 280.0), _COOL, 5.0),
        ((150.0, 150.0, 280.0), _NEUTRAL, 7.0),
        ((450.0, 150.0, 280.0), _AMBER, 11.0),
    ]
    return [Lamp(pos, _lamp_emission(shape) + (tag,), 1.0) for pos, shape, tag in specs]


def _as_xy(p) -> tuple[float, float]:
    if isinstance(p, Position):
        return p.x, p.y
    return float(p[0]), float(p[1])


def noiseless_array(lamps: Sequence[Lamp], sensor: SensorModel, p) -> np.ndarray:
    if not lamps:
        raise SimulationError("at least one lamp is required")
    x, y = _as_xy(p)
    if not (math.isfinite(x) and math.isfinite(y)):
        raise SimulationError(f"position must be finite, got ({x}, {y})")
    out = np.array(sensor.ambient, dtype=np.float64)
    flicker = 0.0
    for lamp in lamps:
        lx, ly, lz = lamp.pos
        dz = lz - sensor.height_cm
        d2 = (x - lx) ** 2 + (y - ly) ** 2 + dz ** 2
        if d2 == 0:
            raise SimulationError(f"sensor at ({x}, {y}) coincides with lamp at {lamp.pos}")
        # angle from the lamp's downward normal; receiver faces up so incidence matches
        cos_t = max(dz, 0.0) / math.sqrt(d2)
        gain = cos_t ** lamp.lambert_order * cos_t / d2
        em = np.asarray(lamp.emission)
        for c in range(N_CHANNELS):
            if c != FLICKER:
                out[c] += em[c] * gain
        flicker += em[FLICKER]
    out[FLICKER] += flicker
    return np.clip(out, 0.0, sensor.adc_max)


def noiseless_reading(lamps: Sequence[Lamp], sensor: SensorModel, p) -> Spectrum:
    return Spectrum.from_array(noiseless_array(lamps, sensor, p))


def _noisy(clean: np.ndarray, sensor: SensorModel, rng: np.random.Generator, n: int) -> np.ndarray:
    eps = rng.normal(0.0, sensor.noise_rel, size=(n, N_CHANNELS)) if sensor.noise_rel > 0 \
        else np.zeros((n, N_CHANNELS))
    return np.rint(np.clip(clean * (1.0 + eps), 0.0, sensor.adc_max))


def sample_reading(lamps: Sequence[Lamp], sensor: SensorModel, p, rng_seed: int) -> Spectrum:
    """One noisy reading: multiplicative Gaussian noise, clamp, round."""
    clean = noiseless_array(lamps, sensor, p)
    rng = np.random.default_rng(rng_seed)
    return Spectrum.from_array(_noisy(clean, sensor, rng, 1)[0])


def sample_readings(lamps: Sequence[Lamp], sensor: SensorModel, p, n: int,
                    rng_seed: int) -> np.ndarray:
    """``n`` readings at one point as an (n, 11) array."""
    clean = noiseless_array(lamps, sensor, p)
    return _noisy(clean, sensor, np.random.default_rng(rng_seed), n)


def generate_corpus(room: RoomPolygon, layout: ReferenceLayout, lamps: Sequence[Lamp],
                    sensor: SensorModel, protocol: Protocol, seed: int) -> Dataset:
    """dwell_s * rate_hz readings at every reference point.

    Each point draws from its own stream derived from (seed, rp_id), so the
    corpus does not depend on generation order.
    """
    layout.validate(room)
    n = protocol.samples_per_point
    samples = []
    for rp_id, p in enumerate(layout.points):
        rows = sample_readings(lamps, sensor, p, n, derive_seed(seed, "rp", rp_id))
        samples.extend(LabeledSample(Spectrum.from_array(r), p, rp_id, k)
                       for k, r in enumerate(rows))
    return Dataset(tuple(samples), Provenance.SIMULATED)


def dimmed(lamps: Sequence[Lamp], factor: float) -> list[Lamp]:
    """Copy of ``lamps`` with every intensity channel scaled by ``factor``."""
    out = []
    for lamp in lamps:
        em = [w * factor if c != FLICKER else w for c, w in enumerate(lamp.emission)]
        out.append(Lamp(lamp.pos, tuple(em), lamp.lambert_order))
    return out
