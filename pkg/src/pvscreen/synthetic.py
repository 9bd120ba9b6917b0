"""Seeded procedural panel images for desk-scale experiments.

Every image is a blue cell grid with one class-specific surface pattern
painted on top.  The pattern's extent in ``[0, 1]`` sets the severity
grade, so the same generator feeds both the classifier and the regressor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import RgbImage
from .severity import SeverityGrade
from .taxonomy import DefectClass

PANEL_RGB = np.array([0.10, 0.16, 0.42])
FRAME_RGB = np.array([0.72, 0.74, 0.78])
MINOR_EXTENT = 0.15
MAJOR_EXTENT = 0.55


@dataclass
class SyntheticSample:
    image: RgbImage
    defect: DefectClass
    extent: float
    grade: SeverityGrade


def grade_for_extent(defect: DefectClass, extent: float) -> SeverityGrade:
    if defect is DefectClass.CLEAN or extent < MINOR_EXTENT:
        return SeverityGrade.NIL
    return SeverityGrade.MINOR if extent < MAJOR_EXTENT else SeverityGrade.MAJOR


def _blend(img, mask, color, alpha=1.0):
    a = np.clip(mask * alpha, 0.0, 1.0)[..., None]
    img[:] = img * (1.0 - a) + np.asarray(color) * a


def _panel(size, rng):
    yy, xx = np.mgrid[0:size, 0:size] / size
    shade = 0.9 + 0.2 * (0.5 * xx + 0.5 * yy) * rng.uniform(0.5, 1.0)
    img = PANEL_RGB * shade[..., None] + rng.normal(0.0, 0.015, (size, size, 3))
    cells = 4
    pitch = size / cells
    line = np.zeros((size, size), dtype=bool)
    for k in range(cells + 1):
        pos = min(int(round(k * pitch)), size - 1)
        line[:, pos] = True
        line[pos, :] = True
    _blend(img, line, FRAME_RGB, 0.8)
    return img


def _blobs(size, rng, count, radius):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size))
    for _ in range(count):
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = radius * rng.uniform(0.6, 1.4, 2)
        d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        mask = np.maximum(mask, np.clip(1.5 - d, 0.0, 1.0))
    return mask


def _lines(size, rng, count, width, origin=None):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    mask = np.zeros((size, size))
    oy, ox = origin if origin is not None else rng.uniform(0.3 * size, 0.7 * size, 2)
    for _ in range(count):
        theta = rng.uniform(0, 2 * np.pi)
        length = rng.uniform(0.4, 0.9) * size
        dy, dx = np.sin(theta), np.cos(theta)
        t = np.clip((yy - oy) * dy + (xx - ox) * dx, 0, length)
        dist = np.hypot(yy - (oy + t * dy), xx - (ox + t * dx))
        mask = np.maximum(mask, np.clip(1.0 - dist / width, 0.0, 1.0))
    return mask


def render(defect: DefectClass, extent: float, size: int, rng: np.random.Generator) -> RgbImage:
    """Draw one panel of ``defect`` with pattern extent ``extent`` in [0, 1]."""
    img = _panel(size, rng)
    e = float(np.clip(extent, 0.0, 1.0))
    yy, xx = np.mgrid[0:size, 0:size] / size
    if defect is DefectClass.PHYSICAL_DAMAGE:
        mask = _blobs(size, rng, 1 + int(4 * e), size * (0.08 + 0.12 * e))
        _blend(img, mask, (0.22, 0.14, 0.08))
        _blend(img, _lines(size, rng, 2, 0.8 + e), (0.05, 0.04, 0.03), 0.9)
    elif defect is DefectClass.BIRD_DROPPING:
        mask = _blobs(size, rng, 2 + int(10 * e), size * 0.06)
        _blend(img, mask, (0.96, 0.95, 0.88))
    elif defect is DefectClass.ELECTRICAL_FAULT:
        cy, cx = rng.uniform(0.25, 0.75, 2)
        r = 0.08 + 0.3 * e
        heat = np.clip(1.0 - np.hypot(yy - cy, xx - cx) / r, 0.0, 1.0) ** 0.7
        _blend(img, heat, (1.0, 0.55, 0.08))
        _blend(img, np.clip(heat * 2 - 1, 0, 1), (1.0, 0.95, 0.6))
    elif defect is DefectClass.SNOW_COVER:
        edge = 0.1 + 0.85 * e + 0.05 * np.sin(xx * rng.uniform(6, 14) + rng.uniform(0, 6))
        mask = np.clip((edge - yy) * size / 2.0, 0.0, 1.0)
        _blend(img, mask, (0.93, 0.95, 0.98))
    elif defect is DefectClass.SOILING:
        mask = np.clip((yy - (1.0 - 0.15 - 0.8 * e)) * 3.0, 0.0, 1.0)
        mask = mask * (0.75 + 0.25 * rng.random((size, size)))
        _blend(img, mask, (0.50, 0.36, 0.20), 0.85)
    elif defect is DefectClass.CELL_DAMAGE:
        cells = 4
        n_bad = 1 + int(round(5 * e))
        pitch = size / cells
        for k in rng.choice(cells * cells, size=n_bad, replace=False):
            r, c = divmod(int(k), cells)
            y0, y1 = int(r * pitch) + 1, int((r + 1) * pitch)
            x0, x1 = int(c * pitch) + 1, int((c + 1) * pitch)
            img[y0:y1, x0:x1] = np.array([0.03, 0.03, 0.05]) + rng.normal(0, 0.01, (y1 - y0, x1 - x0, 3))
    elif defect is DefectClass.BREAKAGE:
        mask = _lines(size, rng, 3 + int(6 * e), 0.9 + 0.8 * e)
        _blend(img, mask, (0.92, 0.94, 0.96))
    elif defect is DefectClass.DUST:
        density = 0.15 + 0.6 * e
        speck = (rng.random((size, size)) < density).astype(np.float64)
        _blend(img, speck, (0.78, 0.70, 0.55), 0.75)
        _blend(img, np.ones((size, size)), (0.70, 0.65, 0.55), 0.15 + 0.3 * e)
    return RgbImage(np.clip(img, 0.0, 1.0))


def make_dataset(per_class: int, size: int = 64, seed: int = 0) -> list:
    """``per_class`` samples of each class, ordered by class then index."""
    samples = []
    for defect in DefectClass:
        rng = np.random.default_rng([seed, int(defect)])
        for _ in range(per_class):
            extent = 0.0 if defect is DefectClass.CLEAN else float(rng.uniform(0.0, 1.0))
            img = render(defect, extent, size, rng)
            samples.append(SyntheticSample(img, defect, extent, grade_for_extent(defect, extent)))
    return samples
