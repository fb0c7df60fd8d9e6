"""Minimal GeoTIFF reading and writing on top of tifffile.

Supports exactly what the pipeline needs: single- or multi-band rasters of
32-bit floats or 8-bit integers on a north-up square grid, with the standard
georeferencing tags (pixel scale, tiepoint, geo-key directory) and the GDAL
NoData convention. Values round-trip bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tifffile

from .errors import DataError, ParameterError

__all__ = ["GeoReference", "load_geotiff", "save_geotiff"]

_TAG_PIXEL_SCALE = 33550
_TAG_TIEPOINT = 33922
_TAG_GEO_KEYS = 34735
_TAG_GDAL_NODATA = 42113

_KEY_MODEL_TYPE = 1024
_KEY_RASTER_TYPE = 1025
_KEY_GEOGRAPHIC_CRS = 2048
_KEY_PROJECTED_CRS = 3072

_MODEL_PROJECTED = 1
_MODEL_GEOGRAPHIC = 2
_RASTER_PIXEL_IS_AREA = 1


@dataclass(frozen=True)
class GeoReference:
    """North-up square-pixel grid placement: top-left corner plus cell size."""

    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 20.0
    epsg: int = 32633

    def __post_init__(self) -> None:
        if not self.pixel_size > 0.0:
            raise ParameterError(f"pixel_size must be positive, got {self.pixel_size}")
        if self.epsg <= 0:
            raise ParameterError(f"epsg must be a positive code, got {self.epsg}")

    def coarsened(self, factor: int) -> "GeoReference":
        return GeoReference(
            origin_x=self.origin_x,
            origin_y=self.origin_y,
            pixel_size=self.pixel_size * factor,
            epsg=self.epsg,
        )


def _geo_key_directory(epsg: int) -> tuple[int, ...]:
    geographic = epsg == 4326
    model = _MODEL_GEOGRAPHIC if geographic else _MODEL_PROJECTED
    crs_key = _KEY_GEOGRAPHIC_CRS if geographic else _KEY_PROJECTED_CRS
    return (
        1, 1, 0, 3,
        _KEY_MODEL_TYPE, 0, 1, model,
        _KEY_RASTER_TYPE, 0, 1, _RASTER_PIXEL_IS_AREA,
        crs_key, 0, 1, epsg,
    )


def save_geotiff(
    path: str | Path,
    data: np.ndarray,
    georef: GeoReference,
    nodata: float | int | None = None,
) -> None:
    """Write a (H, W) or (C, H, W) array as a GeoTIFF.

    float32 and uint8 arrays are written as-is; NaN is the conventional
    NoData for floats and should be passed as ``nodata=float("nan")`` so the
    tag advertises it.
    """
    data = np.asarray(data)
    if data.ndim not in (2, 3):
        raise ParameterError(f"data must be 2-D or 3-D, got shape {data.shape}")
    if data.dtype not in (np.float32, np.uint8):
        raise ParameterError(f"unsupported dtype {data.dtype}; use float32 or uint8")
    extratags = [
        (_TAG_PIXEL_SCALE, "d", 3, (georef.pixel_size, georef.pixel_size, 0.0)),
        (_TAG_TIEPOINT, "d", 6, (0.0, 0.0, 0.0, georef.origin_x, georef.origin_y, 0.0)),
        (_TAG_GEO_KEYS, "H", 16, _geo_key_directory(georef.epsg)),
    ]
    if nodata is not None:
        extratags.append((_TAG_GDAL_NODATA, "s", 0, _format_nodata(nodata)))
    kwargs = {}
    if data.ndim == 3:
        kwargs["planarconfig"] = "separate"
    tifffile.imwrite(
        path, data, photometric="minisblack", extratags=extratags, **kwargs
    )


def _format_nodata(nodata: float | int) -> str:
    if isinstance(nodata, float) and math.isnan(nodata):
        return "nan"
    if float(nodata) == int(nodata):
        return str(int(nodata))
    return repr(float(nodata))


def _parse_nodata(raw: object) -> float | None:
    if raw is None:
        return None
    text = str(raw).strip().strip("\x00")
    if not text:
        return None
    try:
        return float(text)
    except ValueError:
        return None


def _parse_georef(page: tifffile.TiffPage, path: Path) -> GeoReference:
    tags = page.tags
    scale = tags.get(_TAG_PIXEL_SCALE)
    tiepoint = tags.get(_TAG_TIEPOINT)
    keys = tags.get(_TAG_GEO_KEYS)
    if scale is None or tiepoint is None:
        raise DataError(f"{path}: missing georeferencing tags")
    sx, sy = float(scale.value[0]), float(scale.value[1])
    if not math.isclose(sx, sy, rel_tol=1e-9):
        raise DataError(f"{path}: non-square pixels ({sx} x {sy}) are not supported")
    tie = tiepoint.value
    if float(tie[0]) != 0.0 or float(tie[1]) != 0.0:
        raise DataError(f"{path}: tiepoint not anchored at the raster origin")
    epsg = 0
    if keys is not None:
        directory = list(keys.value)
        for k in range(4, len(directory), 4):
            key_id, location, _count, value = directory[k : k + 4]
            if key_id in (_KEY_PROJECTED_CRS, _KEY_GEOGRAPHIC_CRS) and location == 0:
                epsg = int(value)
    if epsg == 0:
        raise DataError(f"{path}: no EPSG code in the geo-key directory")
    return GeoReference(
        origin_x=float(tie[3]), origin_y=float(tie[4]), pixel_size=sx, epsg=epsg
    )


def load_geotiff(path: str | Path) -> tuple[np.ndarray, GeoReference, float | None]:
    """Read a GeoTIFF written by this module (or compatible).

    Returns (data, georef, nodata) with data shaped (H, W) or (C, H, W) and
    nodata the advertised NoData value (possibly NaN) or None.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"raster file not found: {path}")
    with tifffile.TiffFile(path) as tif:
        page = tif.pages[0]
        data = tif.asarray()
        georef = _parse_georef(page, path)
        nodata = _parse_nodata(
            page.tags[_TAG_GDAL_NODATA].value if _TAG_GDAL_NODATA in page.tags else None
        )
    return data, georef, nodata
