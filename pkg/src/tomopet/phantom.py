"""Activity phantoms: loading, saving, synthetic generation, and event budgets.

Images are stored on disk in the PIMG format: magic ``PIMG`` + version byte
0x01, little-endian u32 width, u32 height, f32 pixel size in mm, then
width*height f32 values in row-major order.  In memory values are float64;
files are float32, so loaded values are exactly representable and the
save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

PIMG_MAGIC = b"PIMG"
PIMG_VERSION = 1

# Classic head phantom ellipses (value, a, b, x0, y0, phi_deg) on the unit
# square [-1, 1]^2; intensities are the original high-contrast set.
_SHEPP_LOGAN_ELLIPSES = (
    (2.00, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.98, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.02, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.02, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.01, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.01, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.01, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.01, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.01, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


@dataclass(frozen=True)
class ActivityMap:
    """Nonnegative 2D emission image on a square-pixel grid.

    ``values`` has shape (height, width); pixel (i, j) is centered at
    physical coordinates x = (j + 0.5 - width/2) * pixel_size,
    y = (i + 0.5 - height/2) * pixel_size, with the grid centered on the
    origin.
    """

    values: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"activity map must be 2D and non-empty, got shape {v.shape}")
        if not float(self.pixel_size) > 0:
            raise ValidationError(f"pixel_size must be positive, got {self.pixel_size}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("activity map contains non-finite values")
        if np.any(v < 0):
            raise ValidationError("activity map contains negative values")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "pixel_size", float(self.pixel_size))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def total_activity(self) -> float:
        return float(self.values.sum())

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x, y) coordinate arrays of shape (height, width) in mm."""
        h, w = self.values.shape
        x = (np.arange(w) + 0.5 - w / 2.0) * self.pixel_size
        y = (np.arange(h) + 0.5 - h / 2.0) * self.pixel_size
        return np.meshgrid(x, y)


@dataclass(frozen=True)
class PhantomVolume:
    """Ordered stack of same-shape activity slices."""

    slices: tuple[ActivityMap, ...]

    def __post_init__(self):
        slices = tuple(self.slices)
        if not slices:
            raise ValidationError("volume must contain at least one slice")
        first = slices[0]
        for s in slices[1:]:
            if (s.width, s.height, s.pixel_size) != (first.width, first.height, first.pixel_size):
                raise ValidationError("all slices must share width/height/pixel_size")
        object.__setattr__(self, "slices", slices)

    @property
    def per_slice_activity(self) -> list[float]:
        return [s.total_activity for s in self.slices]


def save_image(amap: ActivityMap, path) -> None:
    """Write an ActivityMap to a PIMG file."""
    payload = amap.values.astype("<f4").tobytes()
    header = PIMG_MAGIC + bytes([PIMG_VERSION])
    header += struct.pack("<IIf", amap.width, amap.height, amap.pixel_size)
    Path(path).write_bytes(header + payload)


def load_image(path) -> ActivityMap:
    """Read a PIMG file into an ActivityMap.

    Raises FormatError on malformed headers and ValidationError on
    negative values or degenerate dimensions.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 17:
        raise FormatError(f"{path}: truncated PIMG header")
    if raw[:4] != PIMG_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != PIMG_VERSION:
        raise FormatError(f"{path}: unsupported PIMG version {raw[4]}")
    width, height, pixel_size = struct.unpack_from("<IIf", raw, 5)
    if width < 1 or height < 1:
        raise ValidationError(f"{path}: degenerate dimensions {width}x{height}")
    expected = 17 + 4 * width * height
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(raw)}")
    values = np.frombuffer(raw, dtype="<f4", offset=17).reshape(height, width)
    if np.any(values < 0):
        raise ValidationError(f"{path}: negative values in emission image")
    return ActivityMap(values.astype(np.float64), float(pixel_size))


def _shepp_logan_value(x: float, y: float, scale: float) -> float:
    """Sum of ellipse intensities at normalized coordinates (x, y)."""
    total = 0.0
    for value, a, b, x0, y0, phi_deg in _SHEPP_LOGAN_ELLIPSES:
        phi = math.radians(phi_deg)
        xr = (x - x0) * math.cos(phi) + (y - y0) * math.sin(phi)
        yr = -(x - x0) * math.sin(phi) + (y - y0) * math.cos(phi)
        if (xr / a) ** 2 + (yr / b) ** 2 <= 1.0:
            total += value
    return max(total, 0.0) * scale


def make_synthetic_phantom(kind: str, width: int, height: int, pixel_size: float = 1.0,
                           **params) -> ActivityMap:
    """Generate a deterministic synthetic phantom.

    Supported kinds:
      disk        params: radius (mm), amplitude=1.0, center=(0, 0) mm
      annulus     params: r_inner, r_outer (mm), amplitude=1.0
      shepp_logan params: amplitude=1.0 (global scale)

    Disk/annulus membership uses strict inequality against the pixel-center
    distance, so radius 0 yields an empty map.
    """
    if width < 8 or height < 8:
        raise ValidationError("phantom grid must be at least 8x8")
    if pixel_size <= 0:
        raise ValidationError("pixel_size must be positive")
    w = int(width)
    h = int(height)
    xs = (np.arange(w) + 0.5 - w / 2.0) * pixel_size
    ys = (np.arange(h) + 0.5 - h / 2.0) * pixel_size
    xx, yy = np.meshgrid(xs, ys)
    max_extent = max(w, h) * pixel_size

    if kind == "disk":
        radius = float(params.pop("radius", min(w, h) * pixel_size / 4.0))
        amplitude = float(params.pop("amplitude", 1.0))
        cx, cy = params.pop("center", (0.0, 0.0))
        _reject_unknown_params(kind, params)
        if radius < 0 or radius > max_extent:
            raise ValidationError(f"disk radius {radius} exceeds grid extent {max_extent}")
        r2 = (xx - cx) ** 2 + (yy - cy) ** 2
        values = np.where(r2 < radius * radius, amplitude, 0.0)
    elif kind == "annulus":
        r_inner = float(params.pop("r_inner", min(w, h) * pixel_size / 8.0))
        r_outer = float(params.pop("r_outer", min(w, h) * pixel_size / 4.0))
        amplitude = float(params.pop("amplitude", 1.0))
        _reject_unknown_params(kind, params)
        if not 0 <= r_inner <= r_outer or r_outer > max_extent:
            raise ValidationError(f"invalid annulus radii ({r_inner}, {r_outer})")
        r2 = xx ** 2 + yy ** 2
        values = np.where((r2 >= r_inner * r_inner) & (r2 < r_outer * r_outer), amplitude, 0.0)
    elif kind == "shepp_logan":
        amplitude = float(params.pop("amplitude", 1.0))
        _reject_unknown_params(kind, params)
        # Map the grid onto the unit square the ellipse table is defined on.
        half = max(w, h) * pixel_size / 2.0
        values = np.empty((h, w))
        for i in range(h):
            for j in range(w):
                values[i, j] = _shepp_logan_value(xs[j] / half, ys[i] / half, amplitude)
    else:
        raise ValidationError(f"unknown phantom kind {kind!r}")
    return ActivityMap(values, pixel_size)


def _reject_unknown_params(kind, params):
    if params:
        raise ValidationError(f"unknown {kind} parameters: {sorted(params)}")


def slice_event_budget(volume: PhantomVolume, n_total: int) -> list[int]:
    """Apportion n_total events across slices proportionally to activity.

    Uses the largest-remainder method so the counts sum to n_total exactly.
    """
    if n_total < 0:
        raise ValidationError("n_total must be nonnegative")
    activity = np.asarray(volume.per_slice_activity, dtype=np.float64)
    total = activity.sum()
    if total <= 0:
        raise ValidationError("cannot apportion events in an all-zero volume")
    quota = n_total * activity / total
    counts = np.floor(quota).astype(np.int64)
    remainder = int(n_total - counts.sum())
    if remainder > 0:
        # Largest fractional parts win the leftover events; ties go to the
        # lower slice index for determinism.
        order = np.lexsort((np.arange(len(quota)), -(quota - counts)))
        counts[order[:remainder]] += 1
    return [int(c) for c in counts]


@dataclass(frozen=True)
class ManifestEntry:
    input_lpet_path: str
    ground_truth_path: str
    sim_config_id: str
    split: str
    input_mri_path: str | None = None

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValidationError(f"split must be 'train' or 'test', got {self.split!r}")


@dataclass(frozen=True)
class DatasetManifest:
    """Paired-dataset manifest mapping inputs to ground truths."""

    entries: tuple[ManifestEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(self.entries)
        seen: dict[str, str] = {}
        for e in entries:
            prev = seen.get(e.input_lpet_path)
            if prev is not None and prev != e.split:
                raise ValidationError(f"entry {e.input_lpet_path!r} appears in both train and test")
            seen[e.input_lpet_path] = e.split
        object.__setattr__(self, "entries", entries)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def validate_paths(self, base_dir=None) -> None:
        """Check that every referenced file exists and is readable."""
        base = Path(base_dir) if base_dir is not None else Path(".")
        for e in self.entries:
            for p in (e.input_lpet_path, e.ground_truth_path, e.input_mri_path):
                if p is None:
                    continue
                full = base / p
                if not full.is_file():
                    raise ValidationError(f"manifest references missing file {full}")


def save_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "entries": [
            {
                "input_lpet_path": e.input_lpet_path,
                "input_mri_path": e.input_mri_path,
                "ground_truth_path": e.ground_truth_path,
                "sim_config_id": e.sim_config_id,
                "split": e.split,
            }
            for e in manifest.entries
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or "entries" not in doc:
        raise FormatError(f"{path}: manifest must be an object with an 'entries' list")
    entries = []
    for item in doc["entries"]:
        try:
            entries.append(ManifestEntry(
                input_lpet_path=item["input_lpet_path"],
                ground_truth_path=item["ground_truth_path"],
                sim_config_id=item["sim_config_id"],
                split=item["split"],
                input_mri_path=item.get("input_mri_path"),
            ))
        except KeyError as exc:
            raise FormatError(f"{path}: manifest entry missing field {exc}") from exc
    return DatasetManifest(tuple(entries))
