"""Stochastic view generation for contrastive training.

A pool is an ordered list of policies; each policy fires independently per
image per view with its configured probability, so a view may be transformed
by any combination of policies, including all or none. Policies are applied
in pool order, and every fired policy is recorded with its sampled parameters
in the view's provenance.

Images are float32 arrays of shape (3, H, W) with values in [0, 1]; the three
channels are identical copies of the grayscale plane at load time. Photometric
policies are channel-coupled by default.

Everything is seed-deterministic: the per-view random stream is derived from
(seed, view index, image index), so results are independent of worker count
and evaluation order.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DataError, NumericError

KIND_CROP_ZOOM = "crop_zoom"
KIND_NO_ZOOM_CROP = "no_zoom_crop"
KIND_FLIP = "flip"
KIND_COLOR_JITTER = "color_jitter"
KIND_GAUSSIAN_BLUR = "gaussian_blur"
KIND_CUTOUT = "cutout"
KIND_CVAUG = "cvaug"
KIND_NOTCH_FILTER = "notch_filter"
KIND_MIXUP = "mixup"

# Canonical pool order: geometric, then photometric, then destructive.
POLICY_KINDS = (
    KIND_CROP_ZOOM,
    KIND_NO_ZOOM_CROP,
    KIND_FLIP,
    KIND_COLOR_JITTER,
    KIND_CVAUG,
    KIND_GAUSSIAN_BLUR,
    KIND_CUTOUT,
    KIND_NOTCH_FILTER,
    KIND_MIXUP,
)

_DEFAULTS = {
    KIND_CROP_ZOOM: dict(probability=1.0, scale_min=0.08, scale_max=1.0,
                         ratio_min=0.75, ratio_max=4.0 / 3.0),
    KIND_NO_ZOOM_CROP: dict(probability=1.0, scale_min=0.90, scale_max=1.0,
                            ratio_min=0.95, ratio_max=1.05),
    KIND_FLIP: dict(probability=1.0, horizontal_prob=0.5, vertical_prob=0.5),
    KIND_COLOR_JITTER: dict(probability=0.8, brightness=0.8, contrast=0.8,
                            saturation=0.8, hue=0.2, per_channel=False),
    KIND_GAUSSIAN_BLUR: dict(probability=0.5, sigma_min=0.1, sigma_max=2.0),
    KIND_CUTOUT: dict(probability=1.0, max_repeats=3, repeat_prob=0.5,
                      frac_min=0.02, frac_max=0.30,
                      aspect_min=0.3, aspect_max=3.33),
    KIND_CVAUG: dict(probability=1.0, invert_prob=0.5, rotate_prob=0.5,
                     max_angle_deg=170.0, sharpen_prob=0.5, sharpen_amount=0.5),
    KIND_NOTCH_FILTER: dict(probability=0.5, pool_size=30, max_zeroed=15),
    KIND_MIXUP: dict(probability=0.5, m_min=0.1, m_max=0.4),
}


@dataclass
class AugPolicy:
    """One member of the transform pool: a kind, a firing probability, and
    kind-specific parameter bounds."""

    kind: str
    probability: float
    params: dict = field(default_factory=dict)


def default_policy(kind: str) -> AugPolicy:
    if kind not in _DEFAULTS:
        raise ConfigError(f"unknown augmentation policy {kind!r}")
    params = dict(_DEFAULTS[kind])
    probability = params.pop("probability")
    return AugPolicy(kind=kind, probability=probability, params=params)


def baseline_pool() -> list[AugPolicy]:
    """Crop-and-zoom, flips, color jitter and Gaussian blur."""
    return [default_policy(k) for k in
            (KIND_CROP_ZOOM, KIND_FLIP, KIND_COLOR_JITTER, KIND_GAUSSIAN_BLUR)]


def pool_with(*extra_kinds: str) -> list[AugPolicy]:
    """Baseline pool plus the named extra policies, in canonical order."""
    kinds = [KIND_CROP_ZOOM, KIND_FLIP, KIND_COLOR_JITTER, KIND_GAUSSIAN_BLUR]
    for kind in extra_kinds:
        if kind not in _DEFAULTS:
            raise ConfigError(f"unknown augmentation policy {kind!r}")
        if kind not in kinds:
            kinds.append(kind)
    ordered = [k for k in POLICY_KINDS if k in kinds]
    return [default_policy(k) for k in ordered]


def validate_policy(policy: AugPolicy) -> None:
    if policy.kind not in _DEFAULTS:
        raise ConfigError(f"unknown augmentation policy {policy.kind!r}")
    if not 0.0 <= policy.probability <= 1.0:
        raise ConfigError(
            f"{policy.kind}: probability {policy.probability} outside [0, 1]")
    defaults = {k: v for k, v in _DEFAULTS[policy.kind].items() if k != "probability"}
    for key in policy.params:
        if key not in defaults:
            raise ConfigError(f"{policy.kind}: unknown parameter {key!r}")
    p = {**defaults, **policy.params}
    kind = policy.kind
    if kind in (KIND_CROP_ZOOM, KIND_NO_ZOOM_CROP):
        if not 0.0 < p["scale_min"] <= p["scale_max"] <= 1.0:
            raise ConfigError(
                f"{kind}: crop scale range [{p['scale_min']}, {p['scale_max']}] "
                f"must lie within (0, 1] (default {defaults['scale_min']}"
                f"..{defaults['scale_max']})")
        if not 0.0 < p["ratio_min"] <= p["ratio_max"]:
            raise ConfigError(f"{kind}: bad aspect range")
    elif kind == KIND_FLIP:
        for key in ("horizontal_prob", "vertical_prob"):
            if not 0.0 <= p[key] <= 1.0:
                raise ConfigError(f"flip: {key} outside [0, 1]")
    elif kind == KIND_COLOR_JITTER:
        for key in ("brightness", "contrast", "saturation"):
            if p[key] < 0.0:
                raise ConfigError(f"color_jitter: {key} must be >= 0")
        if not 0.0 <= p["hue"] <= 0.5:
            raise ConfigError("color_jitter: hue strength outside [0, 0.5]")
    elif kind == KIND_GAUSSIAN_BLUR:
        if not 0.0 < p["sigma_min"] <= p["sigma_max"]:
            raise ConfigError("gaussian_blur: bad sigma range "
                              f"(default {defaults['sigma_min']}..{defaults['sigma_max']})")
    elif kind == KIND_CUTOUT:
        if not 0 <= int(p["max_repeats"]):
            raise ConfigError("cutout: max_repeats must be >= 0")
        if not 0.0 <= p["repeat_prob"] <= 1.0:
            raise ConfigError("cutout: repeat_prob outside [0, 1]")
        if not 0.0 < p["frac_min"] <= p["frac_max"] <= 1.0:
            raise ConfigError("cutout: area fraction range must lie within (0, 1] "
                              f"(default {defaults['frac_min']}..{defaults['frac_max']})")
        if not 0.0 < p["aspect_min"] <= p["aspect_max"]:
            raise ConfigError("cutout: bad aspect range")
    elif kind == KIND_CVAUG:
        for key in ("invert_prob", "rotate_prob", "sharpen_prob"):
            if not 0.0 <= p[key] <= 1.0:
                raise ConfigError(f"cvaug: {key} outside [0, 1]")
        if not 0.0 <= p["max_angle_deg"] <= 180.0:
            raise ConfigError("cvaug: max_angle_deg outside [0, 180] "
                              f"(default {defaults['max_angle_deg']})")
    elif kind == KIND_NOTCH_FILTER:
        if int(p["pool_size"]) < 1:
            raise ConfigError("notch_filter: pool_size must be >= 1")
        if not 0 <= int(p["max_zeroed"]) <= int(p["pool_size"]):
            raise ConfigError("notch_filter: max_zeroed must be in [0, pool_size] "
                              f"(default {defaults['max_zeroed']})")
    elif kind == KIND_MIXUP:
        if not 0.0 <= p["m_min"] <= p["m_max"] <= 1.0:
            raise ConfigError("mixup: strength range must lie within [0, 1] "
                              f"(default {defaults['m_min']}..{defaults['m_max']})")


def policy_param(policy: AugPolicy, key: str):
    defaults = _DEFAULTS[policy.kind]
    return policy.params.get(key, defaults[key])


# ---------------------------------------------------------------------------
# image helpers
# ---------------------------------------------------------------------------

def three_channel(img: np.ndarray) -> np.ndarray:
    """Repeat a grayscale (H, W) plane into a (3, H, W) float32 image."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        return np.repeat(arr[None, :, :], 3, axis=0)
    if arr.ndim == 3 and arr.shape[0] == 3:
        return arr.copy()
    raise DataError(f"expected (H, W) or (3, H, W) image, got {arr.shape}")


def unit_from_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float32) / 255.0


def _clip01(img):
    return np.clip(img, 0.0, 1.0, out=img)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize (C, H, W) with bilinear interpolation, half-pixel centers,
    clamped borders."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    src = img.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0u = np.floor(ys).astype(np.int64)
    x0u = np.floor(xs).astype(np.int64)
    fy = ys - y0u
    fx = xs - x0u
    y0 = np.clip(y0u, 0, h - 1)
    y1 = np.clip(y0u + 1, 0, h - 1)
    x0 = np.clip(x0u, 0, w - 1)
    x1 = np.clip(x0u + 1, 0, w - 1)
    top = src[:, y0][:, :, x0] * (1 - fx) + src[:, y0][:, :, x1] * fx
    bot = src[:, y1][:, :, x0] * (1 - fx) + src[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[None, :, None] + bot * fy[None, :, None]
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# crop policies
# ---------------------------------------------------------------------------

def sample_crop(rng, side: int, scale_range, ratio_range) -> dict:
    """Sample a crop window: area fraction uniform in scale_range, aspect
    log-uniform in ratio_range, placed uniformly inside the image."""
    if side < 32:
        raise DataError(f"image side {side} too small to crop (min 32)")
    lo, hi = scale_range
    if not 0.0 < lo <= hi <= 1.0:
        raise ConfigError(f"crop scale range [{lo}, {hi}] outside (0, 1]")
    area = float(side * side)
    log_ratio = (math.log(ratio_range[0]), math.log(ratio_range[1]))
    for _ in range(10):
        target = area * rng.uniform(lo, hi)
        aspect = math.exp(rng.uniform(*log_ratio))
        cw = int(round(math.sqrt(target * aspect)))
        ch = int(round(math.sqrt(target / aspect)))
        if 0 < cw <= side and 0 < ch <= side:
            top = int(rng.integers(0, side - ch + 1))
            left = int(rng.integers(0, side - cw + 1))
            return {"top": top, "left": left, "height": ch, "width": cw}
    # aspect bounds never fit: fall back to the largest centered square crop
    ch = cw = min(side, int(round(math.sqrt(area * hi))))
    top = (side - ch) // 2
    return {"top": top, "left": top, "height": ch, "width": cw}


def apply_crop_resize(img: np.ndarray, top: int, left: int,
                      height: int, width: int) -> np.ndarray:
    c, h, w = img.shape
    crop = img[:, top:top + height, left:left + width]
    return _bilinear_resize(crop, h, w)


def crop_zoom(img, rng, scale_range=(0.08, 1.0), ratio_range=(0.75, 4.0 / 3.0)):
    """Random crop of a sub-region followed by a bilinear zoom back to the
    original side."""
    params = sample_crop(rng, _square_side(img), scale_range, ratio_range)
    return apply_crop_resize(img, **params)


def no_zoom_crop(img, rng, scale_range=(0.90, 1.0), ratio_range=(0.95, 1.05)):
    """Crop variant keeping at least 90% of the footprint, so the physical
    scale of features is nearly preserved."""
    side = _square_side(img)
    params = sample_crop(rng, side, scale_range, ratio_range)
    return apply_crop_resize(img, **params)


def _square_side(img) -> int:
    c, h, w = img.shape
    if h != w:
        raise DataError(f"expected square image, got {h}x{w}")
    return h


# ---------------------------------------------------------------------------
# flips
# ---------------------------------------------------------------------------

def sample_flip(rng, horizontal_prob=0.5, vertical_prob=0.5) -> dict:
    return {"horizontal": bool(rng.random() < horizontal_prob),
            "vertical": bool(rng.random() < vertical_prob)}


def apply_flip(img, horizontal: bool, vertical: bool):
    out = img
    if horizontal:
        out = out[:, :, ::-1]
    if vertical:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def random_flip(img, rng):
    return apply_flip(img, **sample_flip(rng))


# ---------------------------------------------------------------------------
# color jitter
# ---------------------------------------------------------------------------

def sample_jitter(rng, brightness=0.8, contrast=0.8, saturation=0.8, hue=0.2,
                  per_channel=False) -> dict:
    def factor(strength, n):
        lo, hi = max(0.0, 1.0 - strength), 1.0 + strength
        vals = rng.uniform(lo, hi, size=n)
        return [float(v) for v in vals] if n > 1 else float(vals[0])

    n = 3 if per_channel else 1
    return {
        "brightness": factor(brightness, n),
        "contrast": factor(contrast, n),
        "saturation": float(rng.uniform(max(0.0, 1.0 - saturation), 1.0 + saturation)),
        "hue_shift": float(rng.uniform(-hue, hue)),
    }


def _rgb_to_hsv(img):
    r, g, b = img[0], img[1], img[2]
    maxc = np.max(img, axis=0)
    minc = np.min(img, axis=0)
    v = maxc
    spread = maxc - minc
    s = np.where(maxc > 0, spread / np.where(maxc > 0, maxc, 1.0), 0.0)
    safe = np.where(spread > 0, spread, 1.0)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc,
                 np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(spread > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def _hsv_to_rgb(img):
    h, s, v = img[0], img[1], img[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def apply_jitter(img, brightness, contrast, saturation, hue_shift):
    """Brightness (multiplicative), contrast (blend with the gray mean),
    saturation (blend with luminance), then hue rotation, in that order.

    Scalar brightness/contrast keep the three channels coupled; per-channel
    lists break channel equality, after which saturation and hue act."""
    out = img.astype(np.float64)

    def broadcast(f):
        arr = np.asarray(f, dtype=np.float64)
        return arr.reshape(3, 1, 1) if arr.ndim == 1 else arr

    out = _clip01(out * broadcast(brightness))
    luma = 0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]
    out = _clip01(broadcast(contrast) * out + (1.0 - broadcast(contrast)) * luma.mean())
    luma = 0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2]
    out = _clip01(saturation * out + (1.0 - saturation) * luma[None])
    if hue_shift != 0.0:
        hsv = _rgb_to_hsv(out)
        hsv[0] = (hsv[0] + hue_shift) % 1.0
        out = _clip01(_hsv_to_rgb(hsv))
    return out.astype(np.float32)


def color_jitter(img, rng, brightness=0.8, contrast=0.8, saturation=0.8,
                 hue=0.2, per_channel=False):
    params = sample_jitter(rng, brightness, contrast, saturation, hue, per_channel)
    return apply_jitter(img, **params)


# ---------------------------------------------------------------------------
# Gaussian blur
# ---------------------------------------------------------------------------

def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def _convolve_separable(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    radius = len(kernel) // 2
    if radius >= min(plane.shape):
        raise DataError(
            f"blur radius {radius} too large for image {plane.shape}")
    out = plane.astype(np.float64)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for tap, weight in enumerate(kernel):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(tap, tap + out.shape[axis])
            acc += weight * padded[tuple(sl)]
        out = acc
    return out


def apply_blur(img, sigma: float):
    kernel = _gaussian_kernel(sigma)
    out = np.stack([_convolve_separable(img[c], kernel) for c in range(img.shape[0])])
    return _clip01(out).astype(np.float32)


def gaussian_blur(img, rng, sigma_range=(0.1, 2.0)):
    sigma = float(rng.uniform(*sigma_range))
    return apply_blur(img, sigma)


# ---------------------------------------------------------------------------
# cutout
# ---------------------------------------------------------------------------

def sample_cutout(rng, height: int, width: int, max_repeats=3, repeat_prob=0.5,
                  frac_range=(0.02, 0.30), aspect_range=(0.3, 3.33)) -> dict:
    """Up to max_repeats independent rectangles, each drawn with repeat_prob;
    rectangles are placed fully inside the image and may overlap."""
    rects = []
    for _ in range(int(max_repeats)):
        if rng.random() >= repeat_prob:
            continue
        frac = rng.uniform(*frac_range)
        aspect = rng.uniform(*aspect_range)  # height / width
        rect_area = frac * height * width
        rh = int(round(math.sqrt(rect_area * aspect)))
        rw = int(round(math.sqrt(rect_area / aspect)))
        rh = min(max(rh, 1), height)
        rw = min(max(rw, 1), width)
        top = int(rng.integers(0, height - rh + 1))
        left = int(rng.integers(0, width - rw + 1))
        rects.append([top, left, rh, rw])
    return {"rects": rects}


def apply_cutout(img, rects):
    out = img.copy()
    for top, left, rh, rw in rects:
        out[:, top:top + rh, left:left + rw] = 0.0
    return out


def cutout(img, rng, max_repeats=3, repeat_prob=0.5,
           frac_range=(0.02, 0.30), aspect_range=(0.3, 3.33)):
    c, h, w = img.shape
    params = sample_cutout(rng, h, w, max_repeats, repeat_prob,
                           frac_range, aspect_range)
    return apply_cutout(img, **params)


# ---------------------------------------------------------------------------
# classical computer-vision composite: inversion, rotation, sharpening
# ---------------------------------------------------------------------------

_SMOOTH_KERNEL = np.array([[1.0, 1.0, 1.0],
                           [1.0, 5.0, 1.0],
                           [1.0, 1.0, 1.0]]) / 13.0


def sample_cvaug(rng, invert_prob=0.5, rotate_prob=0.5, max_angle_deg=170.0,
                 sharpen_prob=0.5) -> dict:
    invert = bool(rng.random() < invert_prob)
    rotate = bool(rng.random() < rotate_prob)
    angle = float(rng.uniform(-max_angle_deg, max_angle_deg)) if rotate else 0.0
    sharpen = bool(rng.random() < sharpen_prob)
    return {"invert": invert, "angle_deg": angle if rotate else None,
            "sharpen": sharpen}


def apply_rotate(img, angle_deg: float):
    """Rotate counter-clockwise about the image center, bilinear sampling,
    zero fill outside the source frame."""
    c, h, w = img.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse map: source coordinates for each destination pixel
    sy = cos_t * yy + sin_t * xx + cy
    sx = -sin_t * yy + cos_t * xx + cx
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros((c, h, w), dtype=np.float64)
    src = img.astype(np.float64)
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yi = y0 + dy
        xi = x0 + dx
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        weight = np.where(dy, fy, 1.0 - fy) * np.where(dx, fx, 1.0 - fx)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        contrib = src[:, yc, xc] * (weight * valid)[None]
        out += contrib
    return out.astype(np.float32)


def apply_sharpen(img, amount: float):
    smooth = np.stack([_convolve2d_reflect(img[c], _SMOOTH_KERNEL)
                       for c in range(img.shape[0])])
    out = img.astype(np.float64) + amount * (img.astype(np.float64) - smooth)
    return _clip01(out).astype(np.float32)


def _convolve2d_reflect(plane, kernel):
    kh, kw = kernel.shape
    ry, rx = kh // 2, kw // 2
    padded = np.pad(plane.astype(np.float64), ((ry, ry), (rx, rx)), mode="reflect")
    out = np.zeros(plane.shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + plane.shape[0], j:j + plane.shape[1]]
    return out


def apply_cvaug(img, invert, angle_deg, sharpen, sharpen_amount=0.5):
    out = img
    if invert:
        out = (1.0 - out.astype(np.float64)).astype(np.float32)
    if angle_deg is not None:
        out = apply_rotate(out, angle_deg)
    if sharpen:
        out = apply_sharpen(out, sharpen_amount)
    return out


def cvaug(img, rng, invert_prob=0.5, rotate_prob=0.5, max_angle_deg=170.0,
          sharpen_prob=0.5, sharpen_amount=0.5):
    params = sample_cvaug(rng, invert_prob, rotate_prob, max_angle_deg, sharpen_prob)
    return apply_cvaug(img, sharpen_amount=sharpen_amount, **params)


# ---------------------------------------------------------------------------
# random notch filter
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _conjugate_orbit_table(h: int, w: int):
    """Group frequency-plane indices into conjugate-closed orbits so that
    zeroing an orbit keeps the inverse transform real."""
    seen = np.zeros((h, w), dtype=bool)
    orbits = []
    for u in range(h):
        for v in range(w):
            if seen[u, v]:
                continue
            cu, cv = (-u) % h, (-v) % w
            group = ((u, v),) if (cu, cv) == (u, v) else ((u, v), (cu, cv))
            for gu, gv in group:
                seen[gu, gv] = True
            orbits.append(group)
    return tuple(orbits)


def ranked_notch_orbits(plane: np.ndarray) -> list:
    """Conjugate orbits of the plane's 2-D spectrum, ranked by descending
    coefficient magnitude; ties broken by index for determinism."""
    h, w = plane.shape
    coeffs = np.fft.fft2(plane.astype(np.float64))
    mags = np.abs(coeffs)
    orbits = _conjugate_orbit_table(h, w)
    return sorted(orbits, key=lambda grp: (-mags[grp[0]], grp[0]))


def sample_notch(rng, img, pool_size=30, max_zeroed=15) -> dict:
    """Pick 0..max_zeroed orbits uniformly among the pool_size most dominant
    spectral orbits, never the single most dominant one."""
    gray = img.mean(axis=0)
    ranked = ranked_notch_orbits(gray)
    candidates = ranked[1:1 + int(pool_size)]
    if len(candidates) < int(pool_size):
        raise DataError(
            f"image too small for a {pool_size}-orbit notch pool")
    k = int(rng.integers(0, int(max_zeroed) + 1))
    chosen = rng.choice(len(candidates), size=k, replace=False)
    groups = [candidates[i] for i in sorted(int(c) for c in chosen)]
    return {"zeroed": [[list(idx) for idx in grp] for grp in groups]}


def apply_notch(img, zeroed):
    """Zero the given conjugate-closed frequency index groups in every
    channel's spectrum and invert back to a real image."""
    c, h, w = img.shape
    if h != w:
        raise DataError(f"notch filter requires a square image, got {h}x{w}")
    out = np.empty((c, h, w), dtype=np.float32)
    for ch in range(c):
        coeffs = np.fft.fft2(img[ch].astype(np.float64))
        for group in zeroed:
            for u, v in group:
                coeffs[u, v] = 0.0
        rec = np.fft.ifft2(coeffs)
        residue = float(np.max(np.abs(rec.imag))) if rec.size else 0.0
        if residue >= 1e-9:
            raise NumericError(
                f"notch selection was not conjugate-closed (imag residue {residue})")
        out[ch] = np.clip(rec.real, 0.0, 1.0)
    return out


def notch_filter(img, rng, pool_size=30, max_zeroed=15):
    _square_side(img)
    params = sample_notch(rng, img, pool_size, max_zeroed)
    return apply_notch(img, **params)


# ---------------------------------------------------------------------------
# mixup
# ---------------------------------------------------------------------------

def mixup(img_a, img_b, m: float):
    """Convex combination (1 - m) * A + m * B."""
    if img_a.shape != img_b.shape:
        raise DataError(
            f"mixup shape mismatch: {img_a.shape} vs {img_b.shape}")
    out = (1.0 - m) * img_a.astype(np.float64) + m * img_b.astype(np.float64)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# view generation
# ---------------------------------------------------------------------------

@dataclass
class ViewBatch:
    """Two stochastically augmented views per source image, with per-view
    provenance of every fired policy and its sampled parameters."""

    views_a: np.ndarray
    views_b: np.ndarray
    provenance_a: list
    provenance_b: list
    source_ids: list

    def __post_init__(self):
        if self.views_a.shape != self.views_b.shape:
            raise DataError("view arrays must have identical shapes")
        n = self.views_a.shape[0]
        if not (len(self.provenance_a) == len(self.provenance_b)
                == len(self.source_ids) == n):
            raise DataError("provenance/id lengths must match the batch size")


def _augment_one(img, pool, rng, originals, index):
    prov = []
    out = img
    for policy in pool:
        if rng.random() >= policy.probability:
            continue
        kind = policy.kind
        if kind == KIND_CROP_ZOOM or kind == KIND_NO_ZOOM_CROP:
            params = sample_crop(
                rng, _square_side(out),
                (policy_param(policy, "scale_min"), policy_param(policy, "scale_max")),
                (policy_param(policy, "ratio_min"), policy_param(policy, "ratio_max")))
            out = apply_crop_resize(out, **params)
        elif kind == KIND_FLIP:
            params = sample_flip(rng, policy_param(policy, "horizontal_prob"),
                                 policy_param(policy, "vertical_prob"))
            out = apply_flip(out, **params)
        elif kind == KIND_COLOR_JITTER:
            params = sample_jitter(
                rng,
                policy_param(policy, "brightness"), policy_param(policy, "contrast"),
                policy_param(policy, "saturation"), policy_param(policy, "hue"),
                policy_param(policy, "per_channel"))
            out = apply_jitter(out, **params)
        elif kind == KIND_GAUSSIAN_BLUR:
            params = {"sigma": float(rng.uniform(policy_param(policy, "sigma_min"),
                                                 policy_param(policy, "sigma_max")))}
            out = apply_blur(out, **params)
        elif kind == KIND_CUTOUT:
            params = sample_cutout(
                rng, out.shape[1], out.shape[2],
                policy_param(policy, "max_repeats"), policy_param(policy, "repeat_prob"),
                (policy_param(policy, "frac_min"), policy_param(policy, "frac_max")),
                (policy_param(policy, "aspect_min"), policy_param(policy, "aspect_max")))
            out = apply_cutout(out, **params)
        elif kind == KIND_CVAUG:
            params = sample_cvaug(
                rng, policy_param(policy, "invert_prob"),
                policy_param(policy, "rotate_prob"),
                policy_param(policy, "max_angle_deg"),
                policy_param(policy, "sharpen_prob"))
            out = apply_cvaug(out, sharpen_amount=policy_param(policy, "sharpen_amount"),
                              **params)
        elif kind == KIND_NOTCH_FILTER:
            params = sample_notch(rng, out, policy_param(policy, "pool_size"),
                                  policy_param(policy, "max_zeroed"))
            out = apply_notch(out, **params)
        elif kind == KIND_MIXUP:
            n = originals.shape[0]
            if n < 2:
                continue  # no partner available
            offset = int(rng.integers(1, n))
            partner = (index + offset) % n
            m = float(rng.uniform(policy_param(policy, "m_min"),
                                  policy_param(policy, "m_max")))
            params = {"partner": partner, "m": m}
            out = mixup(out, originals[partner], m)
        else:
            raise ConfigError(f"unknown augmentation policy {kind!r}")
        prov.append({"policy": kind, "params": params})
    return out, prov


def make_views(images, pool, seed: int, source_ids=None) -> ViewBatch:
    """Produce two independently augmented views of every image in the batch.

    The random stream for image i, view v is derived from (seed, v, i), so the
    output is bit-identical for a given (seed, batch, pool) regardless of
    worker threading. Mixup partners are the partner's un-augmented image from
    the same batch.
    """
    if not pool:
        raise ConfigError("augmentation pool is empty")
    for policy in pool:
        validate_policy(policy)
    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        originals = np.repeat(images[:, None, :, :], 3, axis=1)
    elif images.ndim == 4 and images.shape[1] == 3:
        originals = images.copy()
    else:
        raise DataError(f"expected (N, H, W) or (N, 3, H, W), got {images.shape}")
    n = originals.shape[0]
    if n == 0:
        raise DataError("empty batch")
    if source_ids is None:
        source_ids = [str(i) for i in range(n)]

    views = [np.empty_like(originals), np.empty_like(originals)]
    provenance = [[], []]
    for v in range(2):
        for i in range(n):
            rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, v, i])
            out, prov = _augment_one(originals[i], pool, rng, originals, i)
            views[v][i] = out
            provenance[v].append(prov)
    return ViewBatch(views_a=views[0], views_b=views[1],
                     provenance_a=provenance[0], provenance_b=provenance[1],
                     source_ids=list(source_ids))


# ---------------------------------------------------------------------------
# pool configuration file (INI sections of key = value)
# ---------------------------------------------------------------------------

_BOOL_KEYS = {"per_channel"}
_INT_KEYS = {"max_repeats", "pool_size", "max_zeroed"}


def parse_pool_config(text: str) -> list[AugPolicy]:
    """Parse a pool description: one INI section per policy, in pool order,
    each with `probability` and its parameter bounds."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad pool config: {exc}") from exc
    pool = []
    for section in cp.sections():
        if section not in _DEFAULTS:
            raise ConfigError(f"unknown augmentation policy section [{section}]")
        policy = default_policy(section)
        for key, raw in cp.items(section):
            if key == "probability":
                policy.probability = _parse_float(section, key, raw)
            elif key in _BOOL_KEYS:
                policy.params[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif key in _INT_KEYS:
                try:
                    policy.params[key] = int(raw)
                except ValueError:
                    raise ConfigError(f"[{section}] {key}: expected integer, got {raw!r}")
            else:
                policy.params[key] = _parse_float(section, key, raw)
        validate_policy(policy)
        pool.append(policy)
    if not pool:
        raise ConfigError("pool config defines no policies")
    return pool


def _parse_float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected number, got {raw!r}")


def format_pool_config(pool) -> str:
    cp = configparser.ConfigParser()
    for policy in pool:
        cp.add_section(policy.kind)
        cp.set(policy.kind, "probability", repr(policy.probability))
        defaults = {k: v for k, v in _DEFAULTS[policy.kind].items()
                    if k != "probability"}
        for key, default in defaults.items():
            value = policy.params.get(key, default)
            cp.set(policy.kind, key, repr(value) if not isinstance(value, bool)
                   else str(value).lower())
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def contact_sheet(images, pool, seed: int, columns: int = 6) -> np.ndarray:
    """Render original images beside sampled views as a uint8 grid for visual
    audit: each row is [original, view A, view B, view A', view B', ...]."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 3:
        raise DataError("contact sheet expects a (N, H, W) grayscale batch")
    n, h, w = images.shape
    samples = max(1, (columns - 1) // 2)
    tiles = []
    for i in range(n):
        row = [three_channel(images[i])]
        for rep in range(samples):
            vb = make_views(images[i:i + 1], pool, seed=seed + rep * 7919 + i)
            row.extend([vb.views_a[0], vb.views_b[0]])
        tiles.append(row)
    gap = 2
    cols = len(tiles[0])
    sheet = np.ones((n * (h + gap) - gap, cols * (w + gap) - gap), dtype=np.float32)
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            y, x = r * (h + gap), c * (w + gap)
            sheet[y:y + h, x:x + w] = tile[0]
    return (np.clip(sheet, 0.0, 1.0) * 255.0).round().astype(np.uint8)
