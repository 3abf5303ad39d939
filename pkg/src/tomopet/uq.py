"""Posterior-sample aggregation, PSNR/SSIM metrics, and PNG rendering."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.signal import convolve2d

from .errors import FormatError, ValidationError

PSMP_MAGIC = b"PSMP"
_FORMAT_VERSION = 1

DEFAULT_UQ_DISPLAY_MAX = 0.006

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class PosteriorSampleSet:
    """K same-shape generated images for one conditioning input."""

    samples: np.ndarray  # (k, h, w)
    source_id: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 3 or s.shape[0] < 1:
            raise ValidationError(f"samples must have shape (k, h, w) with k >= 1, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValidationError("samples contain non-finite values")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def k(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class UqMap:
    values: np.ndarray
    display_max: float = DEFAULT_UQ_DISPLAY_MAX

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0):
            raise ValidationError("variance map must be nonnegative")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def sample_mean(sample_set: PosteriorSampleSet) -> np.ndarray:
    """Per-pixel arithmetic mean over the k samples."""
    return np.mean(sample_set.samples, axis=0)


def sample_variance(sample_set: PosteriorSampleSet, unbiased: bool = False) -> UqMap:
    """Per-pixel variance over the k samples (population 1/k by default)."""
    if sample_set.k < 2:
        raise ValidationError("variance needs at least 2 samples")
    mean = np.mean(sample_set.samples, axis=0)
    sq = np.sum((sample_set.samples - mean) ** 2, axis=0)
    # The k-sample mean of identical values may be off by one ulp; pin the
    # variance to exactly zero where all samples agree.
    same = np.all(sample_set.samples == sample_set.samples[0], axis=0)
    sq[same] = 0.0
    denom = sample_set.k - 1 if unbiased else sample_set.k
    return UqMap(sq / denom)


def psnr(reference: np.ndarray, estimate: np.ndarray, data_range: float = 1.0) -> float:
    """10 log10(data_range^2 / MSE) in dB; +inf when the images are identical."""
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValidationError(f"image shapes differ: {ref.shape} vs {est.shape}")
    if not data_range > 0:
        raise ValidationError("data_range must be positive")
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range * data_range / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(reference: np.ndarray, estimate: np.ndarray, data_range: float = 1.0) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5)."""
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValidationError(f"image shapes differ: {ref.shape} vs {est.shape}")
    if min(ref.shape) < _SSIM_WINDOW:
        raise ValidationError(f"images must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW}")
    if not data_range > 0:
        raise ValidationError("data_range must be positive")
    win = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = (_SSIM_K1 * data_range) ** 2
    c2 = (_SSIM_K2 * data_range) ** 2

    def local_mean(img):
        return convolve2d(img, win, mode="valid")

    mu_x = local_mean(ref)
    mu_y = local_mean(est)
    var_x = local_mean(ref * ref) - mu_x * mu_x
    var_y = local_mean(est * est) - mu_y * mu_y
    cov = local_mean(ref * est) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def scale_to_reference(reference: np.ndarray, estimate: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Min-max scale both images to [0, 1] using the reference's range."""
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    lo, hi = float(ref.min()), float(ref.max())
    if hi <= lo:
        return np.zeros_like(ref), est - lo
    return (ref - lo) / (hi - lo), (est - lo) / (hi - lo)


_HOT_BREAKS = (0.365079, 0.746032)


def _hot_lut() -> np.ndarray:
    # Piecewise-linear black-red-yellow-white ramp.
    t = np.arange(256) / 255.0
    r = np.clip(t / _HOT_BREAKS[0], 0.0, 1.0)
    g = np.clip((t - _HOT_BREAKS[0]) / (_HOT_BREAKS[1] - _HOT_BREAKS[0]), 0.0, 1.0)
    b = np.clip((t - _HOT_BREAKS[1]) / (1.0 - _HOT_BREAKS[1]), 0.0, 1.0)
    return (np.stack([r, g, b], axis=1) * 255.0).round().astype(np.uint8)


def render_png(image: np.ndarray, lo: float, hi: float, colormap: str = "gray") -> bytes:
    """Linear clamp-and-scale to 8 bits and encode as deterministic PNG bytes."""
    if not lo < hi:
        raise ValidationError(f"invalid display range [{lo}, {hi}]")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError("image must be 2D")
    t = np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    v8 = np.round(t * 255.0).astype(np.uint8)
    if colormap == "gray":
        pil = Image.fromarray(v8, mode="L")
    elif colormap == "hot":
        pil = Image.fromarray(_hot_lut()[v8], mode="RGB")
    else:
        raise ValidationError(f"unknown colormap {colormap!r}")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def save_psmp(sample_set: PosteriorSampleSet, path) -> None:
    """Write a PSMP v1 sample-set file (k, w, h header then f32 samples)."""
    k, h, w = sample_set.samples.shape
    header = PSMP_MAGIC + bytes([_FORMAT_VERSION]) + struct.pack("<III", k, w, h)
    Path(path).write_bytes(header + sample_set.samples.astype("<f4").tobytes())


def load_psmp(path) -> PosteriorSampleSet:
    raw = Path(path).read_bytes()
    if len(raw) < 17 or raw[:4] != PSMP_MAGIC or raw[4] != _FORMAT_VERSION:
        raise FormatError(f"{path}: not a PSMP v1 file")
    k, w, h = struct.unpack_from("<III", raw, 5)
    expected = 17 + 4 * k * w * h
    if k < 1 or len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    samples = np.frombuffer(raw, dtype="<f4", offset=17).reshape(k, h, w)
    return PosteriorSampleSet(samples.astype(np.float64), source_id=str(path))
