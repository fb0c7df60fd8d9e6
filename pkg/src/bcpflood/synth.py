"""Synthetic flood scenes for desk-scale end-to-end runs.

Each pixel's series is a per-channel mean level plus a seasonal sinusoid
(keyed to acquisition day-of-year) plus i.i.d. Gaussian noise. The flood
polygon gets its drop applied at the final (event) date only; an optional
permanent-water polygon stays dark at every date; an optional urban polygon
marks label-2 flood. Everything is deterministic in the seed.
"""

from __future__ import annotations

import dataclasses
import datetime
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SceneSpecError
from .geotiff import GeoReference
from .raster import RasterStack, ReferenceMap

__all__ = ["SceneSpec", "rasterize_polygon", "synth_scene"]

Polygon = tuple[tuple[float, float], ...]

_DAYS_PER_YEAR = 365.25


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene; see module docstring for semantics.

    ``flood_drop_dB`` is added to flooded pixels at the event date, so a
    negative value darkens them (the conventional open-water signature).
    Polygons are vertex lists in pixel coordinates (x right, y down).
    """

    height: int = 64
    width: int = 64
    n_dates: int = 12
    seasonal_amplitude_dB: float = 1.5
    speckle_sigma_dB: float = 1.0
    flood_polygon: Polygon = ((0.0, 0.0), (32.0, 0.0), (32.0, 64.0), (0.0, 64.0))
    flood_drop_dB: float = -8.0
    seed: int = 0
    water_polygon: Polygon | None = None
    water_drop_dB: float = -6.0
    urban_polygon: Polygon | None = None
    channels: tuple[str, ...] = ("VV", "VH")
    mean_level_dB: tuple[float, ...] = (-12.0, -18.0)
    event_date: str = "2022-10-05"
    resolution_m: float = 20.0
    origin_x: float = 500000.0
    origin_y: float = 4100000.0
    epsg: int = 32633

    def __post_init__(self) -> None:
        if self.height < 2 or self.width < 2:
            raise SceneSpecError(f"grid must be at least 2x2, got {self.height}x{self.width}")
        if self.n_dates < 2:
            raise SceneSpecError(f"need at least 2 dates, got {self.n_dates}")
        if self.speckle_sigma_dB < 0.0:
            raise SceneSpecError(f"speckle sigma must be >= 0, got {self.speckle_sigma_dB}")
        if len(self.channels) not in (1, 2):
            raise SceneSpecError(f"1 or 2 channels supported, got {len(self.channels)}")
        if len(self.mean_level_dB) != len(self.channels):
            raise SceneSpecError(
                f"{len(self.mean_level_dB)} mean levels for {len(self.channels)} channels"
            )
        if not 0 <= self.seed < 2**64:
            raise SceneSpecError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        object.__setattr__(self, "flood_polygon", _normalize_polygon(self.flood_polygon))
        for name in ("water_polygon", "urban_polygon"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _normalize_polygon(value))
        for name in ("flood_polygon", "water_polygon", "urban_polygon"):
            polygon = getattr(self, name)
            if polygon is not None:
                _validate_polygon(polygon, self.height, self.width, name)
        try:
            datetime.date.fromisoformat(self.event_date)
        except ValueError:
            raise SceneSpecError(f"invalid event_date {self.event_date!r}") from None

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SceneSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise SceneSpecError(f"unknown scene fields: {sorted(unknown)}")
        mapping = dict(mapping)
        for key in ("flood_polygon", "water_polygon", "urban_polygon"):
            if mapping.get(key) is not None:
                mapping[key] = tuple(tuple(p) for p in mapping[key])
        for key in ("channels", "mean_level_dB"):
            if key in mapping:
                mapping[key] = tuple(mapping[key])
        return cls(**mapping)

    @classmethod
    def from_json(cls, path: str | Path) -> "SceneSpec":
        try:
            document = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise SceneSpecError(f"scene spec not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise SceneSpecError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(document, dict):
            raise SceneSpecError(f"{path}: scene spec must be a JSON object")
        return cls.from_mapping(document)


def _normalize_polygon(polygon) -> Polygon:
    points = tuple((float(x), float(y)) for x, y in polygon)
    return points


def _shoelace_area(polygon: Polygon) -> float:
    area = 0.0
    for (x1, y1), (x2, y2) in zip(polygon, polygon[1:] + polygon[:1]):
        area += x1 * y2 - x2 * y1
    return 0.5 * abs(area)


def _validate_polygon(polygon: Polygon, height: int, width: int, name: str) -> None:
    if len(polygon) < 3:
        raise SceneSpecError(f"{name} needs at least 3 vertices, got {len(polygon)}")
    if _shoelace_area(polygon) == 0.0:
        raise SceneSpecError(f"{name} has zero area")
    for x, y in polygon:
        if not (0.0 <= x <= width and 0.0 <= y <= height):
            raise SceneSpecError(
                f"{name} vertex ({x}, {y}) outside the {width}x{height} grid"
            )


def rasterize_polygon(polygon: Polygon, height: int, width: int) -> np.ndarray:
    """Boolean mask of pixels whose centers fall inside the polygon.

    Even-odd rule: a center is inside when a ray to the right crosses the
    boundary an odd number of times.
    """
    mask = np.zeros((height, width), dtype=bool)
    edges = list(zip(polygon, polygon[1:] + polygon[:1]))
    xs = np.arange(width) + 0.5
    for row in range(height):
        y = row + 0.5
        inside = np.zeros(width, dtype=bool)
        for (x1, y1), (x2, y2) in edges:
            if (y1 > y) != (y2 > y):
                x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                inside ^= xs < x_cross
        mask[row] = inside
    return mask


def _acquisition_dates(event_date: str, n_dates: int) -> tuple[str, ...]:
    event = datetime.date.fromisoformat(event_date)
    span = 365
    dates = [
        event - datetime.timedelta(days=round((n_dates - 1 - k) * span / (n_dates - 1)))
        for k in range(n_dates)
    ]
    return tuple(d.isoformat() for d in dates)


def synth_scene(spec: SceneSpec) -> tuple[RasterStack, ReferenceMap]:
    """Generate the stack and reference map for one scene spec."""
    t, c = spec.n_dates, len(spec.channels)
    h, w = spec.height, spec.width
    dates = _acquisition_dates(spec.event_date, t)
    rng = np.random.default_rng(spec.seed)

    day_of_year = np.array(
        [datetime.date.fromisoformat(d).timetuple().tm_yday for d in dates], dtype=float
    )
    seasonal = spec.seasonal_amplitude_dB * np.sin(2.0 * math.pi * day_of_year / _DAYS_PER_YEAR)

    data = rng.normal(scale=spec.speckle_sigma_dB, size=(t, c, h, w))
    data += seasonal[:, None, None, None]
    data += np.asarray(spec.mean_level_dB)[None, :, None, None]

    flood = rasterize_polygon(spec.flood_polygon, h, w)
    labels = np.where(flood, 1, 0).astype(np.uint8)
    if spec.urban_polygon is not None:
        urban = rasterize_polygon(spec.urban_polygon, h, w)
        flood = flood | urban
        labels[urban] = 2
    data[-1, :, flood] += spec.flood_drop_dB

    if spec.water_polygon is not None:
        water = rasterize_polygon(spec.water_polygon, h, w)
        data[:, :, water] += spec.water_drop_dB

    georef = GeoReference(
        origin_x=spec.origin_x,
        origin_y=spec.origin_y,
        pixel_size=spec.resolution_m,
        epsg=spec.epsg,
    )
    stack = RasterStack(
        data=data.astype(np.float32),
        nodata_mask=np.zeros((t, h, w), dtype=bool),
        dates=dates,
        channels=spec.channels,
        georef=georef,
        resolution_m=spec.resolution_m,
    )
    reference = ReferenceMap(labels=labels, georef=georef)
    return stack, reference
