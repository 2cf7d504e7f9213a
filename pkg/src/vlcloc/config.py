"""JSON run configuration: schema validation, defaults and typed access."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .geometry import (DEFAULT_EXTENT, DEFAULT_GRID, ReferenceLayout, RoomPolygon, grid_layout,
                       u_polygon)
from .localizer import SearchSpace
from .simlab import Lamp, Protocol, SensorModel, default_lamps
from .spectra import CHANNELS, Position
from .tabgan import GanConfig


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    text = resources.files("vlcloc").joinpath("config.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def default_config_dict() -> dict:
    """The complete default configuration as plain JSON data."""
    poly = u_polygon()
    space = SearchSpace()
    gan = asdict(GanConfig())
    gan.pop("seed")
    return {
        "seed": 0,
        "output_dir": "out",
        "corpus_csv": None,
        "room": {"vertices": [list(v) for v in poly.vertices], "extent": list(DEFAULT_EXTENT),
                 "grid": dict(DEFAULT_GRID)},
        "lamps": [{"pos": list(l.pos), "emission": list(l.emission),
                   "lambert_order": l.lambert_order} for l in default_lamps()],
        "sensor": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in asdict(SensorModel()).items() if k != "adc_max"},
        "protocol": asdict(Protocol()),
        "split": [0.7, 0.15, 0.15],
        "exclude_channels": [],
        "localizer": {"n_trials": 20, "depth": list(space.depth), "widths": list(space.widths),
                      "dropouts": list(space.dropouts), "lr": list(space.lr),
                      "batch_sizes": list(space.batch_sizes), "max_epochs": space.max_epochs,
                      "patience": space.patience},
        "gan": {k: list(v) if isinstance(v, tuple) else v for k, v in gan.items()},
        "augmentation": {"n_synthetic": 6000, "grid_cell_cm": 25.0},
        "stress": {"enabled": False, "region": [0.0, 300.0, 200.0, 800.0], "drop_fraction": 0.5},
        "report": {"hist_bins": 50},
    }


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else "/"


def validate(doc: dict) -> None:
    """Raise ConfigError naming the JSON pointer of the first violation."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)),
                                                               e.message))
    if errors:
        err = errors[0]
        path = list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                path = path + [extra[0]]
        raise ConfigError(f"{_pointer(path)}: {err.message}")


@dataclass(frozen=True)
class StressConfig:
    enabled: bool = False
    region: tuple[float, float, float, float] = (0.0, 300.0, 200.0, 800.0)
    drop_fraction: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    room: RoomPolygon
    layout: ReferenceLayout
    lamps: tuple[Lamp, ...]
    sensor: SensorModel
    protocol: Protocol
    split: tuple[float, float, float]
    exclude_channels: tuple[str, ...]
    search_space: SearchSpace
    n_trials: int
    gan: GanConfig
    n_synthetic: int
    grid_cell_cm: float
    stress: StressConfig
    hist_bins: int
    seed: int
    output_dir: str
    corpus_csv: str | None = None

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def from_dict(doc: dict | None = None) -> RunConfig:
    """Validate ``doc`` against the schema, fill defaults and build typed parts."""
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("/: config must be a JSON object")
    validate(doc)
    full = _merge(default_config_dict(), doc)
    if "room" in doc and "vertices" in doc["room"] and "grid" not in doc["room"] \
            and "reference_points" not in doc["room"]:
        full["room"]["grid"] = dict(DEFAULT_GRID)
    validate(full)
    try:
        r = full["room"]
        room = RoomPolygon(tuple(tuple(v) for v in r["vertices"]), extent=tuple(r["extent"]))
        if r.get("reference_points"):
            layout = ReferenceLayout(tuple(Position(x, y) for x, y in r["reference_points"]),
                                     spacing_cm=0.0, generated=False)
            layout.validate(room)
        else:
            layout = grid_layout(room, **r["grid"])
        lamps = tuple(Lamp(tuple(l["pos"]), tuple(l["emission"]), l.get("lambert_order", 1.0))
                      for l in full["lamps"])
        s = full["sensor"]
        sensor = SensorModel(s["height_cm"], s["noise_rel"], tuple(s["ambient"]))
        protocol = Protocol(full["protocol"]["dwell_s"], full["protocol"]["rate_hz"])
        protocol.samples_per_point
        if abs(sum(full["split"]) - 1.0) > 1e-9:
            raise ConfigError("/split: fractions must sum to 1")
        lz = full["localizer"]
        space = SearchSpace(tuple(lz["depth"]), tuple(lz["widths"]), tuple(lz["dropouts"]),
                            tuple(lz["lr"]), tuple(lz["batch_sizes"]), lz["max_epochs"],
                            lz["patience"])
        if space.depth[0] > space.depth[1] or space.lr[0] > space.lr[1]:
            raise ConfigError("/localizer: ranges must be [low, high]")
        gan = GanConfig(**{k: tuple(v) if isinstance(v, list) else v
                           for k, v in full["gan"].items()})
        st = full["stress"]
        stress = StressConfig(st["enabled"], tuple(st["region"]), st["drop_fraction"])
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"/: {exc}") from None
    return RunConfig(
        raw=full, room=room, layout=layout, lamps=lamps, sensor=sensor, protocol=protocol,
        split=tuple(full["split"]), exclude_channels=tuple(full["exclude_channels"]),
        search_space=space, n_trials=lz["n_trials"], gan=gan,
        n_synthetic=full["augmentation"]["n_synthetic"],
        grid_cell_cm=float(full["augmentation"]["grid_cell_cm"]), stress=stress,
        hist_bins=full["report"]["hist_bins"], seed=full["seed"], output_dir=full["output_dir"],
        corpus_csv=full["corpus_csv"],
    )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return from_dict({})
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"/: invalid JSON ({exc})") from None
    return from_dict(doc)
