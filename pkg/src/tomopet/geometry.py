"""Rotating, partially-equipped 2D detector ring.

The ring has ``n_sectors`` sectors placed uniformly on a circle; each sector
carries ``n_layers`` concentric layers of ``crystals_per_layer`` scintillation
crystals.  Only the sectors flagged active detect photons; rays crossing an
inactive sector's angular span pass through undetected.  The whole ring
rotates with constant angular velocity, discretized into rotation steps.

Crystals are modeled as flat face segments tangent to their layer circle.  A
photon is detected by the first active face its ray crosses, so the inner
layer shadows the outer one.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .errors import FormatError, ValidationError

_RAY_EPS = 1e-9


class CrystalId(NamedTuple):
    sector: int
    layer: int
    crystal: int


class Lor(NamedTuple):
    """Canonical line of response: a < b in CrystalId order."""

    a: CrystalId
    b: CrystalId
    rotation_step: int


def _default_active_sectors(n_sectors: int) -> tuple[bool, ...]:
    # 12 active out of 20: two opposing runs of 6 contiguous sectors.
    mask = [False] * n_sectors
    half = n_sectors // 2
    for k in range(6):
        mask[k % n_sectors] = True
        mask[(half + k) % n_sectors] = True
    return tuple(mask)


@dataclass(frozen=True)
class ScannerConfig:
    n_sectors: int = 20
    crystals_per_layer: int = 8
    n_layers: int = 2
    ring_radius: float = 200.0
    crystal_width: float = 7.0
    active_sectors: tuple[bool, ...] | None = None
    omega0: float = 2.0 * math.pi / 60.0
    n_rotation_steps: int = 180
    fov_radius: float = 185.0

    def __post_init__(self):
        if self.n_sectors < 2 or self.crystals_per_layer < 1 or self.n_layers < 1:
            raise ValidationError("scanner needs >= 2 sectors and >= 1 crystal/layer")
        if self.n_rotation_steps < 1:
            raise ValidationError("n_rotation_steps must be >= 1")
        if self.ring_radius <= 0 or self.crystal_width <= 0:
            raise ValidationError("ring_radius and crystal_width must be positive")
        if not 0 < self.fov_radius < self.ring_radius:
            raise ValidationError("fov_radius must satisfy 0 < fov_radius < ring_radius")
        if self.omega0 <= 0:
            raise ValidationError("omega0 must be positive")
        active = self.active_sectors
        if active is None:
            active = _default_active_sectors(self.n_sectors)
        active = tuple(bool(a) for a in active)
        if len(active) != self.n_sectors:
            raise ValidationError("active_sectors mask length must equal n_sectors")
        if sum(active) < 2:
            raise ValidationError("at least 2 active sectors required")
        # All active sectors inside one open half-circle means no chord can
        # cross the center region, so no usable LOR exists.
        angles = sorted(2.0 * math.pi * k / self.n_sectors for k, a in enumerate(active) if a)
        gaps = [angles[(i + 1) % len(angles)] - angles[i] for i in range(len(angles))]
        gaps[-1] += 2.0 * math.pi
        if max(gaps) > math.pi + 1e-12:
            raise ValidationError("active sectors all lie on one half-circle; no LOR exists")
        object.__setattr__(self, "active_sectors", active)

    def to_json(self) -> str:
        doc = asdict(self)
        doc["active_sectors"] = list(self.active_sectors)
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScannerConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid scanner JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise FormatError("scanner config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise FormatError(f"unknown scanner config fields: {sorted(unknown)}")
        if "active_sectors" in doc and doc["active_sectors"] is not None:
            doc["active_sectors"] = tuple(doc["active_sectors"])
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ScannerConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def config_hash(self) -> bytes:
        """32-byte digest identifying the geometry."""
        return hashlib.sha256(self.to_json().encode("utf-8")).digest()


class Scanner:
    """Immutable precomputed detector geometry; all queries are pure."""

    def __init__(self, config: ScannerConfig):
        self.config = config
        cfg = config
        self.n_crystals = cfg.n_sectors * cfg.n_layers * cfg.crystals_per_layer
        # Layer radii: layer 0 at ring_radius, deeper layers stacked outward
        # by one crystal width.
        self.layer_radii = [cfg.ring_radius + layer * cfg.crystal_width
                            for layer in range(cfg.n_layers)]
        # Common angular pitch keeps the two layers radially aligned.
        pitch = cfg.crystal_width / cfg.ring_radius

        ids = []
        centers = []
        tangents = []
        for sector in range(cfg.n_sectors):
            if not cfg.active_sectors[sector]:
                continue
            phi_s = 2.0 * math.pi * sector / cfg.n_sectors
            for layer in range(cfg.n_layers):
                r = self.layer_radii[layer]
                for crystal in range(cfg.crystals_per_layer):
                    phi = phi_s + (crystal - (cfg.crystals_per_layer - 1) / 2.0) * pitch
                    ids.append(CrystalId(sector, layer, crystal))
                    centers.append((r * math.cos(phi), r * math.sin(phi)))
                    tangents.append((-math.sin(phi), math.cos(phi)))
        self.active_ids: tuple[CrystalId, ...] = tuple(ids)
        self._id_to_index = {cid: i for i, cid in enumerate(ids)}
        self.face_centers = np.asarray(centers)
        face_tangents = np.asarray(tangents)
        half = cfg.crystal_width / 2.0
        self.face_p0 = self.face_centers - half * face_tangents
        self.face_p1 = self.face_centers + half * face_tangents
        self._lors: Optional[list[Lor]] = None
        self._pair_index: Optional[np.ndarray] = None
        self._pairs: Optional[np.ndarray] = None

    # -- rotation -----------------------------------------------------------

    def rotation_angle(self, step: int) -> float:
        return 2.0 * math.pi * step / self.config.n_rotation_steps

    def _check_step(self, step: int) -> None:
        if not isinstance(step, (int, np.integer)) or step < 0:
            raise ValidationError(f"rotation step must be a nonnegative integer, got {step!r}")

    def crystal_index(self, cid: CrystalId) -> int:
        idx = self._id_to_index.get(CrystalId(*cid))
        if idx is None:
            raise ValidationError(f"{cid} is not an active crystal of this scanner")
        return idx

    def crystal_center(self, cid: CrystalId, step: int = 0) -> np.ndarray:
        """Face center of an active crystal at the given rotation step."""
        self._check_step(step)
        c0 = self.face_centers[self.crystal_index(cid)]
        ang = self.rotation_angle(step)
        cos_a, sin_a = math.cos(ang), math.sin(ang)
        return np.array([cos_a * c0[0] - sin_a * c0[1],
                         sin_a * c0[0] + cos_a * c0[1]])

    # -- detection ----------------------------------------------------------

    def detect_rays(self, origins: np.ndarray, dirs: np.ndarray,
                    steps: np.ndarray) -> np.ndarray:
        """Vectorized first-hit test; returns active-crystal indices, -1 on miss.

        Works in the scanner rest frame: instead of rotating every face
        segment by the step angle, the rays are rotated the opposite way.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        steps = np.atleast_1d(np.asarray(steps))
        ang = -2.0 * np.pi * steps / self.config.n_rotation_steps
        cos_a, sin_a = np.cos(ang), np.sin(ang)

        def rot(v):
            return np.stack([cos_a * v[:, 0] - sin_a * v[:, 1],
                             sin_a * v[:, 0] + cos_a * v[:, 1]], axis=1)

        p = rot(origins)
        d = rot(dirs)

        # Ray p + t d vs segment P0 + u (P1 - P0), t > 0, u in [0, 1].
        s = self.face_p1 - self.face_p0  # (M, 2)
        q = self.face_p0[None, :, :] - p[:, None, :]  # (N, M, 2)
        denom = d[:, None, 0] * s[None, :, 1] - d[:, None, 1] * s[None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (q[:, :, 0] * s[None, :, 1] - q[:, :, 1] * s[None, :, 0]) / denom
            u = (q[:, :, 0] * d[:, None, 1] - q[:, :, 1] * d[:, None, 0]) / denom
        hit = (np.abs(denom) > _RAY_EPS) & (t > _RAY_EPS) & (u >= 0.0) & (u <= 1.0)
        t = np.where(hit, t, np.inf)
        first = np.argmin(t, axis=1)
        return np.where(np.isfinite(t[np.arange(len(t)), first]), first, -1)

    def detect_one(self, origin, direction, step: int) -> Optional[CrystalId]:
        """First active crystal hit by a single ray, or None."""
        self._check_step(step)
        idx = int(self.detect_rays(np.asarray([origin]), np.asarray([direction]),
                                   np.asarray([step]))[0])
        return self.active_ids[idx] if idx >= 0 else None

    def detect_pair(self, ray_origin, dir1, dir2,
                    rotation_step: int) -> Optional[tuple[CrystalId, CrystalId]]:
        """Active crystal pair whose faces the two rays first cross.

        Returns the pair in canonical (a < b) order, or None if either ray
        misses every active crystal or both rays end in the same crystal.
        """
        a = self.detect_one(ray_origin, dir1, rotation_step)
        b = self.detect_one(ray_origin, dir2, rotation_step)
        if a is None or b is None or a == b:
            return None
        return (a, b) if a < b else (b, a)

    # -- LOR enumeration ----------------------------------------------------

    def _segment_point_distance(self, p0, p1) -> np.ndarray:
        d = p1 - p0
        denom = np.einsum("ij,ij->i", d, d)
        t = np.clip(np.where(denom > 0, -np.einsum("ij,ij->i", p0, d) / np.maximum(denom, 1e-300), 0.0), 0.0, 1.0)
        closest = p0 + t[:, None] * d
        return np.hypot(closest[:, 0], closest[:, 1])

    def _build_pairs(self) -> None:
        # Candidate pairs are rotation-invariant: the FOV circle is centered
        # on the rotation axis, so filtering at step 0 suffices.
        m = len(self.active_ids)
        ia, ib = np.triu_indices(m, k=1)
        dist = self._segment_point_distance(self.face_centers[ia], self.face_centers[ib])
        keep = dist <= self.config.fov_radius
        self._pairs = np.stack([ia[keep], ib[keep]], axis=1)
        pair_index = np.full((m, m), -1, dtype=np.int64)
        for rank, (i, j) in enumerate(self._pairs):
            pair_index[i, j] = rank
            pair_index[j, i] = rank
        self._pair_index = pair_index

    @property
    def fov_pairs(self) -> np.ndarray:
        """(n_pairs, 2) active-crystal index pairs whose chord crosses the FOV."""
        if self._pairs is None:
            self._build_pairs()
        return self._pairs

    @property
    def pair_index(self) -> np.ndarray:
        """Dense (m, m) lookup of pair rank, -1 for pairs outside the FOV."""
        if self._pair_index is None:
            self._build_pairs()
        return self._pair_index

    @property
    def n_bins(self) -> int:
        return len(self.fov_pairs) * self.config.n_rotation_steps

    def enumerate_lors(self) -> list[Lor]:
        """All canonical LORs in sinogram-bin order (step-major, then pair rank)."""
        if self._lors is None:
            lors = []
            for step in range(self.config.n_rotation_steps):
                for i, j in self.fov_pairs:
                    lors.append(Lor(self.active_ids[i], self.active_ids[j], step))
            self._lors = lors
        return self._lors

    def lor_index(self, lor: Lor) -> int:
        """Sinogram bin index of a canonical LOR."""
        i = self.crystal_index(lor.a)
        j = self.crystal_index(lor.b)
        rank = int(self.pair_index[i, j])
        if rank < 0 or not 0 <= lor.rotation_step < self.config.n_rotation_steps:
            raise ValidationError(f"{lor} is not an enumerated LOR")
        return lor.rotation_step * len(self.fov_pairs) + rank

    def lor_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Face-center endpoints of every enumerated LOR, shape (n_bins, 2) each."""
        pairs = self.fov_pairs
        steps = np.arange(self.config.n_rotation_steps)
        ang = 2.0 * np.pi * steps / self.config.n_rotation_steps
        cos_a, sin_a = np.cos(ang), np.sin(ang)

        def rotate_all(pts):  # (n_pairs, 2) -> (n_steps * n_pairs, 2)
            x = np.outer(cos_a, pts[:, 0]) - np.outer(sin_a, pts[:, 1])
            y = np.outer(sin_a, pts[:, 0]) + np.outer(cos_a, pts[:, 1])
            return np.stack([x.ravel(), y.ravel()], axis=1)

        return (rotate_all(self.face_centers[pairs[:, 0]]),
                rotate_all(self.face_centers[pairs[:, 1]]))


def build_scanner(config: ScannerConfig) -> Scanner:
    """Validate the config and precompute the detector geometry."""
    return Scanner(config)
