"""Image loading, resampling, normalization and training-time augmentation.

Images are held as ``float64`` arrays of shape ``(H, W, 3)`` with every
intensity in ``[0, 1]``.  All stochastic operations take an explicit
``numpy.random.Generator`` so that a seed fully determines the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, ImageFormatError, ImageReadError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
_ROTATION_SNAP = 1e-9


@dataclass(frozen=True)
class RgbImage:
    """An H x W x 3 raster of intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an (H, W, 3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("intensities must be finite and lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def filled(cls, width: int, height: int, value=0.0) -> "RgbImage":
        return cls(np.broadcast_to(np.asarray(value, dtype=np.float64), (height, width, 3)).copy())

    def to_uint8(self) -> np.ndarray:
        return np.round(self.data * 255.0).astype(np.uint8)

    def gray(self) -> np.ndarray:
        """Luma with 0.299/0.587/0.114 weights."""
        return self.data @ _GRAY_WEIGHTS


@dataclass(frozen=True)
class AugmentationConfig:
    crop_scale_min: float = 0.7
    crop_scale_max: float = 1.0
    crop_ratio_min: float = 3.0 / 4.0
    crop_ratio_max: float = 4.0 / 3.0
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    rotation_max_deg: float = 30.0
    jitter_brightness: float = 0.4
    jitter_contrast: float = 0.4
    jitter_saturation: float = 0.2
    jitter_hue: float = 0.1
    output_size: int = 224

    def __post_init__(self):
        if not 0.0 < self.crop_scale_min <= self.crop_scale_max <= 1.0:
            raise ConfigError("crop scale must satisfy 0 < min <= max <= 1")
        if not 0.0 < self.crop_ratio_min <= self.crop_ratio_max:
            raise ConfigError("crop aspect ratio must satisfy 0 < min <= max")
        for name in ("hflip_prob", "vflip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for name in ("jitter_brightness", "jitter_contrast", "jitter_saturation", "jitter_hue"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be >= 0")
        if self.jitter_hue > 0.5:
            raise ConfigError("jitter_hue must be <= 0.5")
        if self.rotation_max_deg < 0.0:
            raise ConfigError("rotation_max_deg must be >= 0")
        if self.output_size < 1:
            raise ConfigError("output_size must be >= 1")

    @classmethod
    def identity(cls, output_size: int = 224) -> "AugmentationConfig":
        """A config whose augment() reduces to a plain resize."""
        return cls(crop_scale_min=1.0, crop_scale_max=1.0, hflip_prob=0.0, vflip_prob=0.0,
                   rotation_max_deg=0.0, jitter_brightness=0.0, jitter_contrast=0.0,
                   jitter_saturation=0.0, jitter_hue=0.0, output_size=output_size)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def load_image(path) -> RgbImage:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise ImageReadError(f"cannot read image {path}: {exc}") from exc
    with fh:
        try:
            with Image.open(fh) as im:
                im.load()
                rgb = np.asarray(im.convert("RGB"))
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            raise ImageFormatError(f"unsupported or corrupt image {path}: {exc}") from exc
    return RgbImage(rgb.astype(np.float64) / 255.0)


def save_image(img: RgbImage, path) -> None:
    Image.fromarray(img.to_uint8(), mode="RGB").save(path)


def _bilinear_sample_axis(n_in: int, n_out: int):
    # half-pixel centres (align_corners=False), source coordinate clamped at 0
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, None)
    lo = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    frac[lo == n_in - 1] = 0.0
    return lo, hi, frac


def _resize_array(arr: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return arr.copy()
    y0, y1, fy = _bilinear_sample_axis(h, out_h)
    x0, x1, fx = _bilinear_sample_axis(w, out_w)
    fx = fx[None, :, None]
    top = arr[y0][:, x0] * (1.0 - fx) + arr[y0][:, x1] * fx
    bottom = arr[y1][:, x0] * (1.0 - fx) + arr[y1][:, x1] * fx
    fy = fy[:, None, None]
    return top * (1.0 - fy) + bottom * fy


def resize_bilinear(img: RgbImage, out_w: int, out_h: int) -> RgbImage:
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    return RgbImage(np.clip(_resize_array(img.data, out_w, out_h), 0.0, 1.0))


def normalize(img: RgbImage, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """Per-channel standardization; returns a channel-first (3, H, W) array."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (3,) or std.shape != (3,):
        raise ValueError("mean and std need exactly three components")
    if np.any(std <= 0.0):
        raise ValueError("std components must be positive")
    return ((img.data - mean) / std).transpose(2, 0, 1)


def sample_crop_box(width: int, height: int, cfg: AugmentationConfig, rng: np.random.Generator):
    """Draw a (top, left, h, w) crop box; center crop after 10 failed attempts."""
    if cfg.crop_scale_min == 1.0:
        # the only box covering the whole area is the image itself
        return 0, 0, height, width
    area = width * height
    log_lo, log_hi = math.log(cfg.crop_ratio_min), math.log(cfg.crop_ratio_max)
    for _ in range(10):
        target = area * rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max)
        ratio = math.exp(rng.uniform(log_lo, log_hi))
        w = int(round(math.sqrt(target * ratio)))
        h = int(round(math.sqrt(target / ratio)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w
    in_ratio = width / height
    if in_ratio < cfg.crop_ratio_min:
        w = width
        h = int(round(w / cfg.crop_ratio_min))
    elif in_ratio > cfg.crop_ratio_max:
        h = height
        w = int(round(h * cfg.crop_ratio_max))
    else:
        w, h = width, height
    h, w = max(1, min(h, height)), max(1, min(w, width))
    return (height - h) // 2, (width - w) // 2, h, w


def random_resized_crop(img: RgbImage, cfg: AugmentationConfig, rng: np.random.Generator) -> RgbImage:
    if img.width < 2 or img.height < 2:
        raise ValueError("random_resized_crop needs an image of at least 2x2")
    top, left, h, w = sample_crop_box(img.width, img.height, cfg, rng)
    crop = img.data[top:top + h, left:left + w]
    out = _resize_array(crop, cfg.output_size, cfg.output_size)
    return RgbImage(np.clip(out, 0.0, 1.0))


def flip(img: RgbImage, horizontal: bool) -> RgbImage:
    return RgbImage(img.data[:, ::-1] if horizontal else img.data[::-1])


def random_flip(img: RgbImage, horizontal: bool, prob: float, rng: np.random.Generator) -> RgbImage:
    if not 0.0 <= prob <= 1.0:
        raise ValueError("flip probability must lie in [0, 1]")
    if rng.random() < prob:
        return flip(img, horizontal)
    return img


def rotate(img: RgbImage, angle_deg: float) -> RgbImage:
    """Counter-clockwise rotation about the image centre, zero fill outside.

    A 90 degree turn reproduces ``np.rot90`` exactly.
    """
    if angle_deg == 0.0:
        return RgbImage(img.data.copy())
    h, w = img.height, img.width
    theta = math.radians(angle_deg)
    cos, sin = math.cos(theta), math.sin(theta)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    sx = cx + cos * dx - sin * dy
    sy = cy + sin * dx + cos * dy
    # snap float noise so exact quarter turns land on pixel centres
    sx = np.where(np.abs(sx - np.round(sx)) < _ROTATION_SNAP, np.round(sx), sx)
    sy = np.where(np.abs(sy - np.round(sy)) < _ROTATION_SNAP, np.round(sy), sy)
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.clip(sx, 0, w - 1)
    sy = np.clip(sy, 0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    d = img.data
    out = (d[y0, x0] * (1 - fx) * (1 - fy) + d[y0, x1] * fx * (1 - fy)
           + d[y1, x0] * (1 - fx) * fy + d[y1, x1] * fx * fy)
    out[~inside] = 0.0
    return RgbImage(np.clip(out, 0.0, 1.0))


def random_rotation(img: RgbImage, max_deg: float, rng: np.random.Generator) -> RgbImage:
    if max_deg < 0:
        raise ValueError("max_deg must be >= 0")
    if max_deg == 0:
        return img
    return rotate(img, rng.uniform(-max_deg, max_deg))


def adjust_brightness(img: RgbImage, factor: float) -> RgbImage:
    return RgbImage(np.clip(img.data * factor, 0.0, 1.0))


def adjust_contrast(img: RgbImage, factor: float) -> RgbImage:
    mean = img.gray().mean()
    return RgbImage(np.clip(mean + factor * (img.data - mean), 0.0, 1.0))


def adjust_saturation(img: RgbImage, factor: float) -> RgbImage:
    gray = img.gray()[..., None]
    return RgbImage(np.clip(gray + factor * (img.data - gray), 0.0, 1.0))


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    safe = np.where(delta > 0, delta, 1.0)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.intp) % 6
    choices = [
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ]
    out = np.zeros_like(hsv)
    for k, c in enumerate(choices):
        out[i == k] = c[i == k]
    return out


def adjust_hue(img: RgbImage, shift: float) -> RgbImage:
    """Rotate hue by ``shift`` turns (``shift`` in [-0.5, 0.5])."""
    if shift == 0.0:
        return img
    hsv = rgb_to_hsv(img.data)
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return RgbImage(np.clip(hsv_to_rgb(hsv), 0.0, 1.0))


def color_jitter(img: RgbImage, cfg: AugmentationConfig, rng: np.random.Generator) -> RgbImage:
    """Brightness, contrast, saturation and hue jitter in a random order."""
    ops = []
    if cfg.jitter_brightness > 0:
        f = rng.uniform(max(0.0, 1 - cfg.jitter_brightness), 1 + cfg.jitter_brightness)
        ops.append(lambda im, f=f: adjust_brightness(im, f))
    if cfg.jitter_contrast > 0:
        f = rng.uniform(max(0.0, 1 - cfg.jitter_contrast), 1 + cfg.jitter_contrast)
        ops.append(lambda im, f=f: adjust_contrast(im, f))
    if cfg.jitter_saturation > 0:
        f = rng.uniform(max(0.0, 1 - cfg.jitter_saturation), 1 + cfg.jitter_saturation)
        ops.append(lambda im, f=f: adjust_saturation(im, f))
    if cfg.jitter_hue > 0:
        f = rng.uniform(-cfg.jitter_hue, cfg.jitter_hue)
        ops.append(lambda im, f=f: adjust_hue(im, f))
    for k in rng.permutation(len(ops)):
        img = ops[k](img)
    return img


def augment(img: RgbImage, cfg: AugmentationConfig, rng: np.random.Generator) -> RgbImage:
    """Crop, flips, rotation, jitter; output is ``output_size`` square."""
    out = random_resized_crop(img, cfg, rng)
    out = random_flip(out, True, cfg.hflip_prob, rng)
    out = random_flip(out, False, cfg.vflip_prob, rng)
    out = random_rotation(out, cfg.rotation_max_deg, rng)
    return color_jitter(out, cfg, rng)
