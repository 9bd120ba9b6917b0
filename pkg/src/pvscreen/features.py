"""Defect-region segmentation and the seven-number region descriptor.

The descriptor fed to the severity regressor is, in order: normalized area,
edge density, mean per-channel color-histogram entropy and four GLCM
texture statistics (contrast, energy, homogeneity, correlation).
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields

import numpy as np

from .imaging import RgbImage
from .taxonomy import DefectClass

EDGE_THRESHOLD = 0.25
HIST_BINS = 32
GLCM_LEVELS = 8
GLCM_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))
OTSU_LEVELS = 256

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


@dataclass(frozen=True)
class FeatureVector:
    normalized_area: float
    edge_density: float
    color_entropy: float
    glcm_contrast: float
    glcm_energy: float
    glcm_homogeneity: float
    glcm_correlation: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        return cls(*(float(v) for v in values))

    @classmethod
    def names(cls):
        return [f.name for f in fields(cls)]


FEATURE_NAMES = FeatureVector.names()
NUM_FEATURES = len(FEATURE_NAMES)


def otsu_threshold(gray: np.ndarray, levels: int = OTSU_LEVELS) -> int:
    """Quantized level ``t`` maximizing between-class variance for ``q <= t`` vs ``q > t``.

    Ties go to the lowest level.
    """
    q = quantize(gray, levels)
    hist = np.bincount(q.ravel(), minlength=levels).astype(np.float64)
    p = hist / hist.sum()
    omega = np.cumsum(p)[:-1]
    mu = np.cumsum(p * np.arange(levels))[:-1]
    mu_total = mu[-1] + p[-1] * (levels - 1)
    denom = omega * (1.0 - omega)
    with np.errstate(divide="ignore", invalid="ignore"):
        between = np.where(denom > 0, (mu_total * omega - mu) ** 2 / denom, 0.0)
    return int(np.argmax(between))


def quantize(gray: np.ndarray, levels: int) -> np.ndarray:
    return np.minimum((gray * levels).astype(np.intp), levels - 1)


def majority_smooth(mask: np.ndarray) -> np.ndarray:
    """One pass of 3x3 majority vote (>= 5 of 9), edge-replicated border."""
    padded = np.pad(mask.astype(np.intp), 1, mode="edge")
    h, w = mask.shape
    votes = sum(padded[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3))
    return votes >= 5


def segment_defect(img: RgbImage, predicted: DefectClass) -> np.ndarray:
    """Boolean (H, W) defect mask.

    The Otsu class whose pixels deviate more (mean absolute deviation) from
    the image median is taken as the defect; ties pick the darker class.
    """
    if DefectClass(predicted) is DefectClass.CLEAN:
        return np.zeros((img.height, img.width), dtype=bool)
    gray = img.gray()
    q = quantize(gray, OTSU_LEVELS)
    if q.min() == q.max():
        return np.zeros(gray.shape, dtype=bool)
    t = otsu_threshold(gray)
    low = q <= t
    median = np.median(gray)
    dev_low = np.abs(gray[low] - median).mean()
    dev_high = np.abs(gray[~low] - median).mean()
    raw = ~low if dev_high > dev_low else low
    return majority_smooth(raw)


def normalized_area(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    padded = np.pad(gray, 1, mode="edge")
    h, w = gray.shape
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    for dy in range(3):
        for dx in range(3):
            window = padded[dy:dy + h, dx:dx + w]
            gx += _SOBEL_X[dy, dx] * window
            gy += _SOBEL_X.T[dy, dx] * window
    return np.sqrt(gx * gx + gy * gy)


def edge_density(img: RgbImage, mask: np.ndarray, threshold: float = EDGE_THRESHOLD) -> float:
    if img.width < 3 or img.height < 3:
        raise ValueError("edge_density needs an image of at least 3x3")
    n = np.count_nonzero(mask)
    if n == 0:
        return 0.0
    edges = sobel_magnitude(img.gray()) > threshold
    return float(np.count_nonzero(edges & mask)) / n


def color_histogram_entropy(img: RgbImage, mask: np.ndarray, bins: int = HIST_BINS) -> float:
    """Mean over R, G, B of the Shannon entropy (bits) of the masked histogram."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    pixels = img.data[mask]
    if len(pixels) == 0:
        return 0.0
    total = 0.0
    for c in range(3):
        counts = np.bincount(quantize(pixels[:, c], bins), minlength=bins)
        p = counts[counts > 0] / len(pixels)
        total += float(-(p * np.log2(p)).sum())
    return max(total / 3.0, 0.0)


def glcm(gray: np.ndarray, mask: np.ndarray, levels: int = GLCM_LEVELS, offsets=GLCM_OFFSETS):
    """Symmetric co-occurrence counts over masked pixel pairs and the number of pairs."""
    q = quantize(gray, levels)
    h, w = q.shape
    counts = np.zeros((levels, levels), dtype=np.int64)
    pairs = 0
    for dr, dc in offsets:
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        a = q[r0:r1, c0:c1]
        b = q[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        both = mask[r0:r1, c0:c1] & mask[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        np.add.at(counts, (a[both], b[both]), 1)
        np.add.at(counts, (b[both], a[both]), 1)
        pairs += int(np.count_nonzero(both))
    return counts, pairs


def glcm_features(img: RgbImage, mask: np.ndarray, levels: int = GLCM_LEVELS):
    """(contrast, energy, homogeneity, correlation) of the masked region."""
    if img.width < 2 or img.height < 2:
        raise ValueError("glcm_features needs an image of at least 2x2")
    counts, pairs = glcm(img.gray(), mask, levels)
    if pairs < 2:
        return 0.0, 1.0, 1.0, 0.0
    p = counts / counts.sum()
    i, j = np.indices(p.shape)
    contrast = float((p * (i - j) ** 2).sum())
    energy = float((p * p).sum())
    homogeneity = float((p / (1.0 + np.abs(i - j))).sum())
    mu_i, mu_j = (p * i).sum(), (p * j).sum()
    sd_i = np.sqrt((p * (i - mu_i) ** 2).sum())
    sd_j = np.sqrt((p * (j - mu_j) ** 2).sum())
    if sd_i < 1e-12 or sd_j < 1e-12:
        correlation = 0.0
    else:
        correlation = float((p * (i - mu_i) * (j - mu_j)).sum() / (sd_i * sd_j))
        correlation = min(1.0, max(-1.0, correlation))
    return contrast, energy, homogeneity, correlation


def describe_region(img: RgbImage, mask: np.ndarray) -> FeatureVector:
    return FeatureVector(
        normalized_area(mask),
        edge_density(img, mask),
        color_histogram_entropy(img, mask),
        *glcm_features(img, mask),
    )


def extract_features(img: RgbImage, predicted: DefectClass, segmenter=segment_defect) -> FeatureVector:
    """Segment with ``segmenter(img, predicted)`` and describe the resulting region."""
    return describe_region(img, segmenter(img, predicted))


FEATURE_CSV_HEADER = ["image_id", "predicted_class", *FEATURE_NAMES]


def write_feature_csv(path, rows) -> None:
    """``rows`` yields ``(image_id, class_code, FeatureVector)`` triples."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURE_CSV_HEADER)
        for image_id, code, vec in rows:
            writer.writerow([image_id, int(code), *(repr(float(v)) for v in vec.as_array())])


def read_feature_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != FEATURE_CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            (row["image_id"], int(row["predicted_class"]),
             FeatureVector(*(float(row[n]) for n in FEATURE_NAMES)))
            for row in reader
        ]
