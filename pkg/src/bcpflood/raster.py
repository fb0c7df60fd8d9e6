"""Multi-date multi-channel raster stacks: manifest parsing, load/save, aggregation.

A stack is an ordered set of acquisition dates, each contributing one raster
per channel on a shared grid; the final date is the event observation. The
manifest is a JSON document listing per-date channel files plus a platform
and orbit filter that every entry must satisfy.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, GeometryError, ManifestError, ParameterError
from .geotiff import GeoReference, load_geotiff, save_geotiff

__all__ = [
    "ManifestEntry",
    "RasterStack",
    "ReferenceMap",
    "StackManifest",
    "aggregate_2x2",
    "aggregate_stack",
    "load_manifest",
    "load_reference",
    "load_stack",
    "reference_digest",
    "save_reference",
    "save_stack",
    "stack_digest",
]

PLATFORMS = ("A", "B")
ORBITS = ("ascending", "descending")

REFERENCE_NODATA = 255
REFERENCE_LABELS = (0, 1, 2)


def _parse_date(text: str, context: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text)
    except (TypeError, ValueError):
        raise ManifestError(f"{context}: invalid ISO-8601 date {text!r}") from None


@dataclass(frozen=True)
class ManifestEntry:
    """One acquisition: date plus one raster path per channel."""

    date: str
    channel_files: dict[str, str]
    platform: str
    orbit: str


@dataclass(frozen=True)
class StackManifest:
    """Ordered acquisitions plus the platform/orbit filter they must match."""

    entries: tuple[ManifestEntry, ...]
    event_date: str
    platform: str
    orbit: str
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        if not self.entries:
            raise ManifestError("manifest has no entries")
        if self.platform not in PLATFORMS:
            raise ManifestError(f"platform must be one of {PLATFORMS}, got {self.platform!r}")
        if self.orbit not in ORBITS:
            raise ManifestError(f"orbit must be one of {ORBITS}, got {self.orbit!r}")
        dates = [_parse_date(e.date, f"entry {i}") for i, e in enumerate(self.entries)]
        for earlier, later in zip(dates, dates[1:]):
            if not earlier < later:
                raise ManifestError(
                    f"dates must be strictly increasing, got {earlier} then {later}"
                )
        event = _parse_date(self.event_date, "event_date")
        if event != dates[-1]:
            raise ManifestError(
                f"event_date {event} must equal the last entry date {dates[-1]}"
            )
        channels = tuple(self.entries[0].channel_files)
        for i, entry in enumerate(self.entries):
            if tuple(entry.channel_files) != channels:
                raise ManifestError(
                    f"entry {i} channels {tuple(entry.channel_files)} differ from {channels}"
                )
            if entry.platform != self.platform or entry.orbit != self.orbit:
                raise ManifestError(
                    f"entry {i} ({entry.platform}, {entry.orbit}) violates the "
                    f"({self.platform}, {self.orbit}) filter"
                )

    @property
    def channels(self) -> tuple[str, ...]:
        return tuple(self.entries[0].channel_files)

    @property
    def dates(self) -> tuple[str, ...]:
        return tuple(entry.date for entry in self.entries)


def load_manifest(path: str | Path) -> StackManifest:
    """Parse and validate a stack manifest JSON file."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from None
    try:
        raw_entries = document["dates"]
        event_date = document["event_date"]
        platform = document["platform"]
        orbit = document["orbit"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing manifest field {exc}") from None
    if not isinstance(raw_entries, list):
        raise ManifestError(f"{path}: 'dates' must be a list")
    entries = []
    for i, raw in enumerate(raw_entries):
        try:
            entries.append(
                ManifestEntry(
                    date=raw["date"],
                    channel_files=dict(raw["channels"]),
                    platform=raw.get("platform", platform),
                    orbit=raw.get("orbit", orbit),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: entry {i} malformed ({exc})") from None
    return StackManifest(
        entries=tuple(entries),
        event_date=event_date,
        platform=platform,
        orbit=orbit,
        base_dir=path.parent,
    )


@dataclass
class RasterStack:
    """T dates by C channels of co-registered rasters plus a NoData mask.

    ``data`` is float32 (T, C, H, W) with NaN at NoData cells; ``nodata_mask``
    is (T, H, W) and flags a pixel-date invalid when any channel is NoData.
    """

    data: np.ndarray
    nodata_mask: np.ndarray
    dates: tuple[str, ...]
    channels: tuple[str, ...]
    georef: GeoReference
    resolution_m: float

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32))
        if data.ndim != 4:
            raise ParameterError(f"data must be (T, C, H, W), got shape {data.shape}")
        t, c, h, w = data.shape
        if t < 2:
            raise ParameterError(f"stack needs at least 2 dates, got {t}")
        if len(self.dates) != t:
            raise ParameterError(f"{len(self.dates)} dates for {t} rasters")
        if len(self.channels) != c:
            raise ParameterError(f"{len(self.channels)} channel names for {c} channels")
        mask = np.asarray(self.nodata_mask, dtype=bool)
        if mask.shape != (t, h, w):
            raise ParameterError(
                f"nodata_mask must have shape {(t, h, w)}, got {mask.shape}"
            )
        self.data = data
        self.nodata_mask = mask

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def event_index(self) -> int:
        return self.data.shape[0] - 1

    def channel_index(self, name: str) -> int:
        try:
            return self.channels.index(name)
        except ValueError:
            raise DataError(
                f"channel {name!r} not in stack channels {self.channels}"
            ) from None


@dataclass
class ReferenceMap:
    """Evaluation labels: 0 non-flooded, 1 flooded open, 2 flooded urban."""

    labels: np.ndarray
    georef: GeoReference

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.ndim != 2:
            raise ParameterError(f"labels must be 2-D, got shape {labels.shape}")
        allowed = set(REFERENCE_LABELS) | {REFERENCE_NODATA}
        present = set(np.unique(labels).tolist())
        if not present <= allowed:
            raise DataError(f"reference labels {sorted(present - allowed)} outside {sorted(allowed)}")
        self.labels = labels

    @property
    def valid(self) -> np.ndarray:
        return self.labels != REFERENCE_NODATA


def _as_nan_nodata(data: np.ndarray, nodata: float | None) -> np.ndarray:
    data = data.astype(np.float32, copy=True)
    if nodata is not None and not np.isnan(nodata):
        data[data == np.float32(nodata)] = np.nan
    return data


def load_stack(manifest: StackManifest) -> RasterStack:
    """Load every entry's channel files into one (T, C, H, W) stack.

    All files must exist and share grid shape and georeference; any channel
    NoData marks the pixel-date invalid.
    """
    channels = manifest.channels
    planes: list[list[np.ndarray]] = []
    georef = None
    shape = None
    for entry in manifest.entries:
        row = []
        for channel in channels:
            file_path = manifest.base_dir / entry.channel_files[channel]
            data, file_georef, nodata = load_geotiff(file_path)
            if data.ndim != 2:
                raise DataError(f"{file_path}: expected a single-band raster")
            if georef is None:
                georef, shape = file_georef, data.shape
            elif file_georef != georef or data.shape != shape:
                raise GeometryError(
                    f"{file_path}: grid {data.shape}/{file_georef} does not match "
                    f"{shape}/{georef}"
                )
            row.append(_as_nan_nodata(data, nodata))
        planes.append(row)
    data = np.stack([np.stack(row) for row in planes])
    nodata_mask = ~np.isfinite(data).all(axis=1)
    return RasterStack(
        data=data,
        nodata_mask=nodata_mask,
        dates=manifest.dates,
        channels=channels,
        georef=georef,
        resolution_m=georef.pixel_size,
    )


def save_stack(stack: RasterStack, out_dir: str | Path, platform: str = "A",
               orbit: str = "ascending") -> Path:
    """Write one GeoTIFF per date and channel plus a manifest JSON.

    Returns the manifest path; loading it reproduces the stack bit-exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for t, date in enumerate(stack.dates):
        channel_files = {}
        for c, channel in enumerate(stack.channels):
            name = f"{date}_{channel.lower()}.tif"
            plane = stack.data[t, c].copy()
            plane[stack.nodata_mask[t]] = np.nan
            save_geotiff(out_dir / name, plane, stack.georef, nodata=float("nan"))
            channel_files[channel] = name
        entries.append(
            {"date": date, "platform": platform, "orbit": orbit, "channels": channel_files}
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(
            {
                "event_date": stack.dates[-1],
                "platform": platform,
                "orbit": orbit,
                "dates": entries,
            },
            indent=2,
        )
        + "\n"
    )
    return manifest_path


def load_reference(path: str | Path) -> ReferenceMap:
    data, georef, nodata = load_geotiff(path)
    if data.ndim != 2 or data.dtype != np.uint8:
        raise DataError(f"{path}: reference map must be a single-band 8-bit raster")
    if nodata is not None and int(nodata) != REFERENCE_NODATA:
        raise DataError(
            f"{path}: reference NoData must be {REFERENCE_NODATA}, got {nodata}"
        )
    return ReferenceMap(labels=data, georef=georef)


def save_reference(reference: ReferenceMap, path: str | Path) -> None:
    save_geotiff(path, reference.labels, reference.georef, nodata=REFERENCE_NODATA)


def aggregate_2x2(raster: np.ndarray) -> np.ndarray:
    """Halve resolution: each output cell is the mean of its 2x2 valid inputs.

    NaN marks NoData; odd dimensions are padded with NoData so border cells
    average whatever valid inputs remain. An output cell is NoData only when
    all four inputs are.
    """
    raster = np.asarray(raster, dtype=np.float64)
    if raster.ndim != 2:
        raise ParameterError(f"raster must be 2-D, got shape {raster.shape}")
    h, w = raster.shape
    ph, pw = h + (h & 1), w + (w & 1)
    padded = np.full((ph, pw), np.nan)
    padded[:h, :w] = raster
    blocks = padded.reshape(ph // 2, 2, pw // 2, 2).transpose(0, 2, 1, 3)
    valid = np.isfinite(blocks)
    counts = valid.sum(axis=(2, 3))
    sums = np.where(valid, blocks, 0.0).sum(axis=(2, 3))
    with np.errstate(invalid="ignore"):
        out = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return out


def aggregate_stack(stack: RasterStack) -> RasterStack:
    """Apply aggregate_2x2 to every date and channel, doubling the cell size."""
    t, c, _h, _w = stack.data.shape
    planes = np.stack(
        [
            np.stack(
                [
                    aggregate_2x2(
                        np.where(stack.nodata_mask[i], np.nan, stack.data[i, j])
                    )
                    for j in range(c)
                ]
            )
            for i in range(t)
        ]
    ).astype(np.float32)
    nodata_mask = ~np.isfinite(planes).all(axis=1)
    return RasterStack(
        data=planes,
        nodata_mask=nodata_mask,
        dates=stack.dates,
        channels=stack.channels,
        georef=stack.georef.coarsened(2),
        resolution_m=stack.resolution_m * 2,
    )


def stack_digest(stack: RasterStack) -> str:
    """Stable content hash over data, mask, dates, channels, and grid."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(stack.data).tobytes())
    digest.update(np.ascontiguousarray(stack.nodata_mask).tobytes())
    digest.update("|".join(stack.dates).encode())
    digest.update("|".join(stack.channels).encode())
    digest.update(
        f"{stack.georef.origin_x}:{stack.georef.origin_y}:"
        f"{stack.georef.pixel_size}:{stack.georef.epsg}:{stack.resolution_m}".encode()
    )
    return digest.hexdigest()


def reference_digest(reference: ReferenceMap) -> str:
    """Stable content hash over labels and grid."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(reference.labels).tobytes())
    digest.update(
        f"{reference.georef.origin_x}:{reference.georef.origin_y}:"
        f"{reference.georef.pixel_size}:{reference.georef.epsg}".encode()
    )
    return digest.hexdigest()
