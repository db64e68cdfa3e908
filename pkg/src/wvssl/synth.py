"""Seeded synthetic texture corpus for desk-scale experiments.

Four class generators mimic the broad texture families seen in sea-surface
radar imagery: oriented periodic streaks, blobby convective cells, calm
low-variance fields, and dark meandering slick curves. Every image also draws
nuisance factors (mean level, gain, speckle strength, low-frequency
background) that carry no class information, so that raw-pixel or untrained
features are confounded while the class texture stays learnable.

Streak images carry a regression target: the dominant wavelength in pixels.
The streak wave vector is sampled on the integer frequency lattice so the
target is recoverable from the image spectrum's peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError
from .store import Manifest, ManifestRecord

CLASS_FLAT = "flat"
CLASS_STREAKS = "streaks"
CLASS_CELLS = "cells"
CLASS_SLICKS = "slicks"
ALL_CLASSES = (CLASS_FLAT, CLASS_STREAKS, CLASS_CELLS, CLASS_SLICKS)

TARGET_NAME = "wavelength_px"


@dataclass
class SynthSpec:
    n_images: int = 2000
    side: int = 64
    classes: tuple = ALL_CLASSES
    overlay_prob: float = 0.0
    split_fractions: tuple = (0.7, 0.15, 0.15)

    def __post_init__(self):
        self.classes = tuple(self.classes)
        if len(self.classes) < 2:
            raise ConfigError("need at least 2 classes")
        unknown = [c for c in self.classes if c not in ALL_CLASSES]
        if unknown:
            raise ConfigError(f"unknown synth classes {unknown} "
                              f"(available: {ALL_CLASSES})")
        if self.n_images < len(self.classes):
            raise ConfigError("need at least one image per class")
        if self.side < 32:
            raise ConfigError("side must be >= 32")
        if not 0.0 <= self.overlay_prob <= 1.0:
            raise ConfigError("overlay_prob outside [0, 1]")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or len(self.split_fractions) != 3:
            raise ConfigError("split_fractions must be three values summing to 1")


def _smooth(noise, sigma):
    radius = max(1, int(math.ceil(2.5 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    k /= k.sum()
    out = noise
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="wrap")
        acc = np.zeros_like(out)
        for tap, weight in enumerate(k):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(tap, tap + out.shape[axis])
            acc += weight * padded[tuple(sl)]
        out = acc
    return out


def _bandpass_clutter(rng, side, lo=3.0, hi=11.0):
    """Isotropic sea-clutter texture confined to a frequency ring; shared by
    the textured classes so their spectral energy profiles overlap."""
    spec = rng.normal(size=(side, side)) + 1j * rng.normal(size=(side, side))
    fy, fx = np.meshgrid(np.fft.fftfreq(side) * side,
                         np.fft.fftfreq(side) * side, indexing="ij")
    radius = np.hypot(fy, fx)
    mask = (radius >= lo) & (radius <= hi)
    field = np.fft.ifft2(spec * mask).real
    return field / (field.std() + 1e-12)


def _streak_pattern(rng, side):
    """Oriented sinusoid with an integer wave vector; returns (pattern, wavelength)."""
    while True:
        kx = int(rng.integers(-10, 11))
        ky = int(rng.integers(0, 11))
        radius = math.hypot(kx, ky)
        if 4.0 <= radius <= 10.0:
            break
    phase = rng.uniform(0.0, 2.0 * math.pi)
    ys, xs = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    amp = rng.uniform(0.15, 0.32)
    pattern = amp * np.sin(2.0 * math.pi * (kx * xs + ky * ys) / side + phase)
    return pattern, side / radius


def _cell_pattern(rng, side):
    blob_sigma = rng.uniform(1.5, 3.5)
    g = _smooth(rng.normal(size=(side, side)), blob_sigma)
    g = (g - g.mean()) / (g.std() + 1e-9)
    cells = np.maximum(g, 0.0) ** 2
    cells /= cells.max() + 1e-9
    # bright or dark cells: the sign flip overlaps the intensity statistics
    # with the slick class, so geometry has to carry the label
    amp = rng.uniform(0.25, 0.50) * (1.0 if rng.random() < 0.5 else -1.0)
    return amp * (cells - cells.mean())


def _slick_pattern(rng, side):
    """Dark meandering curves stamped with a Gaussian cross-profile."""
    mask = np.zeros((side, side), dtype=np.float64)
    ys, xs = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    n_curves = int(rng.integers(2, 5))
    for _ in range(n_curves):
        x = rng.uniform(0, side)
        y = rng.uniform(0, side)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        width = rng.uniform(0.8, 1.8)
        for _ in range(int(side * 2.5)):
            d2 = (xs - x) ** 2 + (ys - y) ** 2
            mask = np.maximum(mask, np.exp(-d2 / (2.0 * width * width)))
            heading += rng.normal(0.0, 0.25)
            x = (x + math.cos(heading)) % side
            y = (y + math.sin(heading)) % side
    depth = rng.uniform(0.28, 0.45)
    return -depth * mask


_PATTERNS = {
    CLASS_STREAKS: _streak_pattern,
    CLASS_CELLS: lambda rng, side: (_cell_pattern(rng, side), None),
    CLASS_SLICKS: lambda rng, side: (_slick_pattern(rng, side), None),
    CLASS_FLAT: lambda rng, side: (np.zeros((side, side)), None),
}


def _render(rng, side, class_name, overlay_class=None):
    pattern, wavelength = _PATTERNS[class_name](rng, side)
    if overlay_class is not None:
        extra, _ = _PATTERNS[overlay_class](rng, side)
        pattern = pattern + extra
    # class-independent nuisances: mean level, gain, speckle strength, clutter
    # strength, and a tone-curve exponent. These dominate first- and
    # second-order image statistics so that untrained features are confounded,
    # while the class texture remains learnable.
    level = rng.uniform(0.30, 0.70)
    gain = rng.uniform(0.45, 1.0)
    gamma = rng.uniform(0.7, 1.4)
    if class_name == CLASS_FLAT and overlay_class is None:
        speckle_sigma = rng.uniform(0.015, 0.035)
        clutter_amp = rng.uniform(0.010, 0.035)
    else:
        speckle_sigma = rng.uniform(0.02, 0.09)
        clutter_amp = rng.uniform(0.05, 0.14)
    clutter = clutter_amp * _bandpass_clutter(rng, side)
    img = (level
           + gain * (pattern + clutter)
           + speckle_sigma * rng.normal(size=(side, side)))
    img = np.clip(img, 0.0, 1.0) ** gamma
    return np.clip(img, 0.0, 1.0), wavelength


def synth_dataset(spec: SynthSpec, seed: int):
    """Generate the corpus in memory.

    Returns (images, manifest): images is a uint8 (N, side, side) array and
    the manifest's paths follow the images/<id>.png layout used by
    write_synth_dataset.
    """
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5D])
    n = spec.n_images
    side = spec.side
    class_cycle = [spec.classes[i % len(spec.classes)] for i in range(n)]
    order = rng.permutation(n)

    split_bounds = (
        int(round(spec.split_fractions[0] * n)),
        int(round((spec.split_fractions[0] + spec.split_fractions[1]) * n)),
    )
    split_order = rng.permutation(n)
    splits = np.empty(n, dtype=object)
    splits[split_order[:split_bounds[0]]] = "train"
    splits[split_order[split_bounds[0]:split_bounds[1]]] = "val"
    splits[split_order[split_bounds[1]:]] = "test"

    overlay_candidates = [c for c in spec.classes if c != CLASS_FLAT]
    images = np.empty((n, side, side), dtype=np.uint8)
    records = []
    for i in range(n):
        img_rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0xE1, i])
        primary = class_cycle[order[i]]
        overlay = None
        if (spec.overlay_prob > 0.0 and primary != CLASS_FLAT
                and len(overlay_candidates) > 1
                and img_rng.random() < spec.overlay_prob):
            others = [c for c in overlay_candidates if c != primary]
            overlay = others[int(img_rng.integers(0, len(others)))]
        unit, wavelength = _render(img_rng, side, primary, overlay)
        images[i] = np.round(unit * 255.0).astype(np.uint8)
        labels = (primary,) if overlay is None else tuple(sorted((primary, overlay)))
        rec_id = f"synth-{i:05d}"
        records.append(ManifestRecord(
            id=rec_id,
            path=f"images/{rec_id}.png",
            split=str(splits[i]),
            labels=labels,
            target=wavelength,
        ))
    manifest = Manifest(records, classes=tuple(sorted(set(spec.classes))),
                        target_name=TARGET_NAME)
    return images, manifest


def write_synth_dataset(out_dir, spec: SynthSpec, seed: int):
    """Generate and persist the corpus; returns the manifest path."""
    from .store import write_manifest

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    images, manifest = synth_dataset(spec, seed)
    for img, rec in zip(images, manifest.records):
        Image.fromarray(img, mode="L").save(out_dir / rec.path, format="PNG")
    manifest.root = out_dir
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest, manifest_path)
    return manifest_path
