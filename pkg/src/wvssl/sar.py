"""Radar-scene preprocessing: incidence normalization against a reference
geophysical model, boxcar downscaling, percentile intensity normalization,
and north-up orientation, plus the flat binary scene format and PNG I/O.

All operations are pure functions; batch preprocessing is safe to run
scene-parallel.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, DegenerateImageError, NumericError

PASS_ASCENDING = "ascending"
PASS_DESCENDING = "descending"
POL_VV = "VV"
POL_HH = "HH"

INCIDENCE_MIN_DEG = 15.0
INCIDENCE_MAX_DEG = 50.0

# Reference wind state used to normalize backscatter into a roughness ratio.
REFERENCE_WIND_MS = 10.0
REFERENCE_AZIMUTH_DEG = 45.0

SCENE_MAGIC = b"WVSC"
SCENE_VERSION = 1
_SCENE_HEADER = struct.Struct("<4sHIIIBB")
_PASS_CODES = {PASS_ASCENDING: 0, PASS_DESCENDING: 1}
_POL_CODES = {POL_VV: 0, POL_HH: 1}


@dataclass
class SceneGrid:
    """Raw 2-D backscatter field (linear-units NRCS) with acquisition metadata."""

    sigma0: np.ndarray
    incidence_deg: float
    polarization: str = POL_VV
    pass_direction: str = PASS_ASCENDING
    source_id: str = ""

    def __post_init__(self):
        self.sigma0 = np.asarray(self.sigma0, dtype=np.float64)
        if self.sigma0.ndim != 2:
            raise DataError(f"sigma0 must be 2-D, got shape {self.sigma0.shape}")
        if not np.all(np.isfinite(self.sigma0)):
            raise DataError("sigma0 contains non-finite values")
        if np.any(self.sigma0 < 0):
            raise DataError("sigma0 contains negative values")
        if not (INCIDENCE_MIN_DEG <= self.incidence_deg <= INCIDENCE_MAX_DEG):
            raise DataError(
                f"incidence angle {self.incidence_deg} deg outside "
                f"[{INCIDENCE_MIN_DEG}, {INCIDENCE_MAX_DEG}]"
            )
        if self.polarization not in (POL_VV, POL_HH):
            raise DataError(f"unknown polarization {self.polarization!r}")
        if self.pass_direction not in (PASS_ASCENDING, PASS_DESCENDING):
            raise DataError(f"unknown pass direction {self.pass_direction!r}")

    @property
    def range_px(self) -> int:
        return self.sigma0.shape[0]

    @property
    def azimuth_px(self) -> int:
        return self.sigma0.shape[1]


@dataclass
class SsrGrid:
    """Dimensionless sea-surface-roughness ratio grid."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"roughness grid must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("roughness grid contains non-finite values")
        if np.any(self.values < 0):
            raise DataError("roughness grid contains negative values")


@dataclass
class ProcessedImage:
    """8-bit grayscale intensity grid, the unit of training/evaluation data."""

    pixels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.dtype != np.uint8:
            raise DataError(f"processed pixels must be uint8, got {self.pixels.dtype}")
        if self.pixels.ndim != 2:
            raise DataError(f"processed image must be 2-D, got shape {self.pixels.shape}")


# 28-coefficient table of the published C-band VV geophysical model function
# (neutral-wind variant). Index 0 is padding so names follow the 1-based
# convention of the published tables.
_GMF_COEF = (
    0.0,
    -0.6878, -0.7957, 0.3380, -0.1728, 0.0000, 0.0040, 0.1103,
    0.0159, 6.7329, 2.7713, -2.2885, 0.4971, -0.7250, 0.0450,
    0.0066, 0.3222, 0.0120, 22.7000, 2.0813, 3.0000, 8.3659,
    -3.3428, 1.3236, 6.2437, 2.3893, 0.3249, 4.1590, 1.6930,
)
_GMF_THETM = 40.0
_GMF_THETHR = 25.0
_GMF_ZPOW = 1.6


def cmod5n(wind_speed_ms: float, incidence_deg: float, rel_azimuth_deg: float) -> float:
    """Predicted VV NRCS (linear units) for a neutral wind over the sea surface.

    Arguments are wind speed in m/s, radar incidence angle in degrees and
    wind-relative azimuth look angle in degrees (periodic, 0 = upwind).
    """
    if not (math.isfinite(wind_speed_ms) and math.isfinite(incidence_deg)
            and math.isfinite(rel_azimuth_deg)):
        raise DataError("non-finite input to cmod5n")
    if not 0.0 < wind_speed_ms <= 50.0:
        raise DataError(f"wind speed {wind_speed_ms} m/s outside (0, 50]")
    if not (INCIDENCE_MIN_DEG <= incidence_deg <= INCIDENCE_MAX_DEG):
        raise DataError(
            f"incidence angle {incidence_deg} deg outside model validity "
            f"[{INCIDENCE_MIN_DEG}, {INCIDENCE_MAX_DEG}]"
        )

    c = _GMF_COEF
    y0, pn = c[19], c[20]
    ya = y0 - (y0 - 1.0) / pn
    yb = 1.0 / (pn * (y0 - 1.0) ** (pn - 1.0))

    # Harmonic terms depend on azimuth only through cos(phi) and cos(2*phi);
    # reduce mod 360 so periodic inputs give bit-identical results.
    phi_rad = math.radians(rel_azimuth_deg % 360.0)
    cos_phi = math.cos(phi_rad)
    cos_2phi = 2.0 * cos_phi * cos_phi - 1.0

    x = (incidence_deg - _GMF_THETM) / _GMF_THETHR
    xx = x * x

    a0 = c[1] + c[2] * x + c[3] * xx + c[4] * x * xx
    a1 = c[5] + c[6] * x
    a2 = c[7] + c[8] * x
    gam = c[9] + c[10] * x + c[11] * xx
    s0 = c[12] + c[13] * x
    s = a2 * wind_speed_ms
    if s >= s0:
        a3 = 1.0 / (1.0 + math.exp(-s))
    else:
        a3_at_s0 = 1.0 / (1.0 + math.exp(-s0))
        a3 = a3_at_s0 * (s / s0) ** (s0 * (1.0 - a3_at_s0))
    b0 = (a3 ** gam) * 10.0 ** (a0 + a1 * wind_speed_ms)

    b1 = c[15] * wind_speed_ms * (
        0.5 + x - math.tanh(4.0 * (x + c[16] + c[17] * wind_speed_ms)))
    b1 = (c[14] * (1.0 + x) - b1) / (math.exp(0.34 * (wind_speed_ms - 25.0)) + 1.0)

    v0 = c[21] + c[22] * x + c[23] * xx
    d1 = c[24] + c[25] * x + c[26] * xx
    d2 = c[27] + c[28] * x
    v2 = wind_speed_ms / v0 + 1.0
    if v2 < y0:
        v2 = ya + yb * (v2 - 1.0) ** pn
    b2 = (-d1 + d2 * v2) * math.exp(-v2)

    nrcs = b0 * (1.0 + b1 * cos_phi + b2 * cos_2phi) ** _GMF_ZPOW
    if not (math.isfinite(nrcs) and nrcs > 0.0):
        raise DataError(f"model returned invalid NRCS {nrcs}")
    return nrcs


def incidence_normalize(scene: SceneGrid) -> SsrGrid:
    """Divide backscatter by the reference-wind model prediction at the scene's
    incidence angle, yielding a sea-surface-roughness ratio grid."""
    if scene.polarization != POL_VV:
        raise DataError("only VV polarization is supported; HH scenes are rejected")
    denom = cmod5n(REFERENCE_WIND_MS, scene.incidence_deg, REFERENCE_AZIMUTH_DEG)
    if denom <= 0.0:
        # unreachable in the valid domain, but guarded: dividing by a
        # non-positive reference would silently corrupt every pixel
        raise NumericError(f"reference NRCS {denom} is not positive")
    return SsrGrid(scene.sigma0 / denom)


def boxcar_downscale(grid: SsrGrid, window: int = 10) -> SsrGrid:
    """Mean over a moving window sampled at stride == window.

    Trailing rows/columns that do not fill a full stride are truncated.
    Output dimensions are floor(dim / window) per axis.
    """
    if window <= 0:
        raise DataError(f"window must be positive, got {window}")
    values = grid.values
    rows, cols = values.shape
    out_r, out_c = rows // window, cols // window
    if out_r == 0 or out_c == 0:
        raise DataError(
            f"grid {rows}x{cols} smaller than boxcar window {window}")
    trimmed = values[: out_r * window, : out_c * window]
    blocks = (
        trimmed.reshape(out_r, window, out_c, window)
        .transpose(0, 2, 1, 3)
        .reshape(out_r, out_c, window * window)
    )
    return SsrGrid(blocks.sum(axis=-1) / float(window * window))


def intensity_normalize(grid: SsrGrid, constant_fill: int | None = None) -> ProcessedImage:
    """Map roughness values onto [0, 255] via the 1st/99th percentile stretch.

    Values at or below the 1st percentile map to 0 and values at or above the
    99th percentile map to 255; in between the map is linear, rounded half-up.
    Percentiles use linear interpolation between order statistics.

    A constant grid has no stretch; by default that raises
    DegenerateImageError, or substitutes `constant_fill` when given.
    """
    values = grid.values
    p01, p99 = np.percentile(values, (1.0, 99.0))
    if p99 == p01:
        if constant_fill is None:
            raise DegenerateImageError(
                "constant image: 1st and 99th percentiles coincide")
        if not 0 <= constant_fill <= 255:
            raise ConfigError(f"constant_fill {constant_fill} outside [0, 255]")
        return ProcessedImage(
            np.full(values.shape, constant_fill, dtype=np.uint8))
    scaled = 255.0 * (values - p01) / (p99 - p01)
    # round half up, then clamp to the 8-bit range
    pixels = np.clip(np.floor(scaled + 0.5), 0.0, 255.0).astype(np.uint8)
    return ProcessedImage(pixels)


def orient_north_up(grid: SsrGrid, pass_direction: str) -> SsrGrid:
    """Flip descending passes in both axes (180 degree rotation); ascending
    grids pass through unchanged."""
    if pass_direction == PASS_ASCENDING:
        return SsrGrid(grid.values.copy())
    if pass_direction == PASS_DESCENDING:
        return SsrGrid(grid.values[::-1, ::-1].copy())
    raise DataError(f"unknown pass direction {pass_direction!r}")


def center_crop_pad(array: np.ndarray, side: int, fill=0) -> np.ndarray:
    """Center-crop each axis down to `side` when larger, pad symmetrically
    with `fill` when smaller."""
    if side <= 0:
        raise ConfigError(f"target side must be positive, got {side}")
    out = array
    for axis in (0, 1):
        n = out.shape[axis]
        if n > side:
            start = (n - side) // 2
            out = out.take(range(start, start + side), axis=axis)
        elif n < side:
            before = (side - n) // 2
            after = side - n - before
            pad = [(0, 0), (0, 0)]
            pad[axis] = (before, after)
            out = np.pad(out, pad, mode="constant", constant_values=fill)
    return out


def preprocess_scene(
    scene: SceneGrid,
    window: int = 10,
    model_side: int | None = 256,
    constant_fill: int | None = None,
) -> ProcessedImage:
    """Full scene pipeline: incidence normalization, north-up orientation,
    boxcar downscaling, intensity normalization, then an optional center
    crop/pad to the square model input size."""
    ssr = incidence_normalize(scene)
    ssr = orient_north_up(ssr, scene.pass_direction)
    ssr = boxcar_downscale(ssr, window=window)
    image = intensity_normalize(ssr, constant_fill=constant_fill)
    pixels = image.pixels
    if model_side is not None:
        pixels = center_crop_pad(pixels, model_side)
    return ProcessedImage(pixels, source_id=scene.source_id)


def write_scene(path, scene: SceneGrid) -> None:
    """Write a scene in the flat binary format (little-endian f32 payload)."""
    rows, cols = scene.sigma0.shape
    header = _SCENE_HEADER.pack(
        SCENE_MAGIC,
        SCENE_VERSION,
        rows,
        cols,
        int(round(scene.incidence_deg * 1000.0)),
        _PASS_CODES[scene.pass_direction],
        _POL_CODES[scene.polarization],
    )
    payload = np.ascontiguousarray(scene.sigma0, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_scene(path) -> SceneGrid:
    """Read a scene from the flat binary format, validating the header."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _SCENE_HEADER.size:
        raise DataError(f"{path}: truncated scene header")
    magic, version, rows, cols, inc_mdeg, pass_code, pol_code = _SCENE_HEADER.unpack(
        raw[: _SCENE_HEADER.size])
    if magic != SCENE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != SCENE_VERSION:
        raise DataError(f"{path}: unsupported scene version {version}")
    expected = rows * cols * 4
    payload = raw[_SCENE_HEADER.size:]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}")
    passes = {v: k for k, v in _PASS_CODES.items()}
    pols = {v: k for k, v in _POL_CODES.items()}
    if pass_code not in passes:
        raise DataError(f"{path}: unknown pass code {pass_code}")
    if pol_code not in pols:
        raise DataError(f"{path}: unknown polarization code {pol_code}")
    sigma0 = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
    return SceneGrid(
        sigma0=sigma0,
        incidence_deg=inc_mdeg / 1000.0,
        polarization=pols[pol_code],
        pass_direction=passes[pass_code],
        source_id=path.stem,
    )


def read_scene_png(png_path, sidecar_path=None) -> SceneGrid:
    """Read a 16-bit grayscale PNG scene with a JSON sidecar metadata record.

    The sidecar (default: same path with .json suffix) must provide
    incidence_deg, and may provide polarization, pass_direction and
    sigma0_scale (raw counts are multiplied by it; default 1/65535).
    """
    png_path = Path(png_path)
    if sidecar_path is None:
        sidecar_path = png_path.with_suffix(".json")
    sidecar_path = Path(sidecar_path)
    if not sidecar_path.exists():
        raise DataError(f"missing sidecar metadata {sidecar_path}")
    try:
        meta = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{sidecar_path}: invalid JSON sidecar: {exc}") from exc
    if "incidence_deg" not in meta:
        raise DataError(f"{sidecar_path}: sidecar lacks incidence_deg")
    with Image.open(png_path) as im:
        if im.mode not in ("I;16", "I", "L"):
            raise DataError(f"{png_path}: expected grayscale PNG, got mode {im.mode}")
        counts = np.asarray(im, dtype=np.float64)
    scale = float(meta.get("sigma0_scale", 1.0 / 65535.0))
    return SceneGrid(
        sigma0=counts * scale,
        incidence_deg=float(meta["incidence_deg"]),
        polarization=meta.get("polarization", POL_VV),
        pass_direction=meta.get("pass_direction", PASS_ASCENDING),
        source_id=png_path.stem,
    )


def write_image_png(image: ProcessedImage, path) -> None:
    Image.fromarray(image.pixels, mode="L").save(path, format="PNG")


def read_image_png(path) -> ProcessedImage:
    path = Path(path)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return ProcessedImage(arr, source_id=path.stem)
