"""Slippy-map projection, ground resolution and raster tile fetching."""

from __future__ import annotations

import io
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import DecodeError, FetchError, InputError
from .types import MAX_MERCATOR_LAT, TileIndex

logger = logging.getLogger(__name__)

TILE_SIZE = 256
EQUATOR_CIRCUMFERENCE_M = 40075016.686
FILL_COLOR = (128, 128, 128)
TOKEN_ENV_VAR = "MAPPRIOR_TILE_TOKEN"


def _check_lat(lat: float) -> None:
    if not math.isfinite(lat) or abs(lat) > MAX_MERCATOR_LAT:
        raise InputError(f"latitude {lat} outside Web-Mercator range +-{MAX_MERCATOR_LAT}")


def wgs84_to_tile(lat: float, lon: float, zoom: int) -> tuple[float, float]:
    """Fractional slippy tile coordinates (x east, y south) of a WGS-84 point."""
    _check_lat(lat)
    n = 2.0**zoom
    x = (lon + 180.0) / 360.0 * n
    y = (1.0 - math.asinh(math.tan(math.radians(lat))) / math.pi) / 2.0 * n
    return x, y


def tile_to_wgs84(x: float, y: float, zoom: int) -> tuple[float, float]:
    """Inverse of :func:`wgs84_to_tile`; returns ``(lat, lon)`` in degrees."""
    n = 2.0**zoom
    lon = x / n * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi * (1.0 - 2.0 * y / n))))
    return lat, lon


def ground_resolution(lat: float, zoom: int) -> float:
    """Meters per pixel of a 256-px tile at ``zoom`` and latitude ``lat``."""
    _check_lat(lat)
    return EQUATOR_CIRCUMFERENCE_M / (TILE_SIZE * 2.0**zoom) * math.cos(math.radians(lat))


@dataclass(frozen=True)
class TileRange:
    zoom: int
    x0: int
    y0: int
    x1: int  # inclusive
    y1: int  # inclusive

    def __post_init__(self):
        if self.x1 < self.x0 or self.y1 < self.y0:
            raise InputError(f"empty tile range {self}")
        TileIndex(self.zoom, self.x0, self.y0)
        TileIndex(self.zoom, self.x1, self.y1)

    @property
    def cols(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def rows(self) -> int:
        return self.y1 - self.y0 + 1

    def __iter__(self):
        for ty in range(self.y0, self.y1 + 1):
            for tx in range(self.x0, self.x1 + 1):
                yield TileIndex(self.zoom, tx, ty)


@dataclass
class StitchedRaster:
    pixels: np.ndarray  # (256*rows, 256*cols, 3) uint8
    tile_range: TileRange
    warnings: list[str] = field(default_factory=list)
    missing: list[TileIndex] = field(default_factory=list)

    @property
    def zoom(self) -> int:
        return self.tile_range.zoom

    @property
    def origin_px(self) -> tuple[float, float]:
        """Global pixel coordinates (x, y) of the raster's top-left corner."""
        return self.tile_range.x0 * TILE_SIZE, self.tile_range.y0 * TILE_SIZE


def decode_tile(payload: bytes, tile=None) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(payload)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:  # PIL raises a zoo of types here
        raise DecodeError(f"cannot decode tile {tile}: {exc}", tile=tile) from exc
    if arr.shape[:2] != (TILE_SIZE, TILE_SIZE):
        raise DecodeError(f"tile {tile} has shape {arr.shape}, expected 256x256", tile=tile)
    return arr


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class TileCache:
    """Directory cache laid out as ``{root}/{zoom}/{x}/{y}{suffix}``."""

    def __init__(self, root, suffix: str = ".png"):
        self.root = Path(root)
        self.suffix = suffix

    def path(self, tile: TileIndex) -> Path:
        return self.root / str(tile.zoom) / str(tile.x) / f"{tile.y}{self.suffix}"

    def get(self, tile: TileIndex) -> bytes | None:
        p = self.path(tile)
        if p.is_file():
            return p.read_bytes()
        return None

    def put(self, tile: TileIndex, payload: bytes) -> None:
        _atomic_write(self.path(tile), payload)


class TileClient:
    """Raster tile source backed by a local cache and an optional HTTP endpoint.

    ``base_url`` is expanded as ``{base}/{zoom}/{x}/{y}{suffix}``; the access
    token is read from ``token`` or the ``MAPPRIOR_TILE_TOKEN`` environment
    variable. With ``offline=True`` (or no ``base_url``) only the cache is used.
    """

    def __init__(
        self,
        cache_dir=None,
        base_url: str | None = None,
        suffix: str = ".png",
        token: str | None = None,
        offline: bool = False,
        retries: int = 3,
        timeout: float = 10.0,
        backoff: float = 0.5,
        session=None,
    ):
        self.cache = TileCache(cache_dir, suffix) if cache_dir is not None else None
        self.base_url = base_url.rstrip("/") if base_url else None
        self.suffix = suffix
        self.token = token if token is not None else os.environ.get(TOKEN_ENV_VAR)
        self.offline = offline or self.base_url is None
        self.retries = max(1, retries)
        self.timeout = timeout
        self.backoff = backoff
        self._session = session
        self.network_calls = 0

    @classmethod
    def from_config(cls, cfg: dict, offline: bool = False) -> "TileClient":
        return cls(
            cache_dir=cfg.get("cache_dir"),
            base_url=cfg.get("base_url"),
            suffix=cfg.get("suffix", ".png"),
            token=cfg.get("token"),
            offline=offline or bool(cfg.get("offline", False)),
            retries=int(cfg.get("retries", 3)),
            timeout=float(cfg.get("timeout", 10.0)),
        )

    def url(self, tile: TileIndex) -> str:
        u = f"{self.base_url}/{tile.zoom}/{tile.x}/{tile.y}{self.suffix}"
        if self.token:
            u += f"?access_token={self.token}"
        return u

    def _download(self, tile: TileIndex) -> bytes:
        if self._session is None:
            import requests

            self._session = requests.Session()
        last = None
        for attempt in range(self.retries):
            self.network_calls += 1
            try:
                resp = self._session.get(self.url(tile), timeout=self.timeout)
                if resp.status_code == 404:
                    raise FileNotFoundError(str(tile))
                resp.raise_for_status()
                return resp.content
            except FileNotFoundError:
                raise
            except Exception as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * (2**attempt))
        raise FetchError(f"failed to fetch tile {tile} after {self.retries} attempts: {last}", tile=tile)

    def get(self, tile: TileIndex) -> np.ndarray | None:
        """Tile pixels, or ``None`` when the tile is unavailable."""
        if self.cache is not None:
            payload = self.cache.get(tile)
            if payload is not None:
                return decode_tile(payload, tile)
        if self.offline:
            return None
        try:
            payload = self._download(tile)
        except FileNotFoundError:
            return None
        arr = decode_tile(payload, tile)
        if self.cache is not None:
            self.cache.put(tile, payload)
        return arr


def fetch_tiles(client: TileClient, tile_range: TileRange, fill=FILL_COLOR) -> StitchedRaster:
    """Stitch a rectangular tile range into one raster (x east, y south).

    Unavailable tiles become ``fill``-colored blocks and are named in the
    returned warnings.
    """
    out = np.empty((tile_range.rows * TILE_SIZE, tile_range.cols * TILE_SIZE, 3), dtype=np.uint8)
    warnings: list[str] = []
    missing: list[TileIndex] = []
    for tile in tile_range:
        r = (tile.y - tile_range.y0) * TILE_SIZE
        c = (tile.x - tile_range.x0) * TILE_SIZE
        arr = client.get(tile)
        if arr is None:
            arr = np.empty((TILE_SIZE, TILE_SIZE, 3), dtype=np.uint8)
            arr[:] = fill
            missing.append(tile)
            msg = f"tile {tile} unavailable, filled"
            warnings.append(msg)
            logger.warning(msg)
        out[r : r + TILE_SIZE, c : c + TILE_SIZE] = arr
    return StitchedRaster(out, tile_range, warnings, missing)


def covering_range(lat: float, lon: float, radius_m: float, zoom: int, margin_px: int = 2) -> TileRange:
    """Smallest tile range covering a disc of ``radius_m`` around a point."""
    tx, ty = wgs84_to_tile(lat, lon, zoom)
    r_px = radius_m / ground_resolution(lat, zoom) + margin_px
    n = (1 << zoom) - 1
    x0 = max(0, int(math.floor(tx - r_px / TILE_SIZE)))
    x1 = min(n, int(math.floor(tx + r_px / TILE_SIZE)))
    y0 = max(0, int(math.floor(ty - r_px / TILE_SIZE)))
    y1 = min(n, int(math.floor(ty + r_px / TILE_SIZE)))
    return TileRange(zoom, x0, y0, x1, y1)
