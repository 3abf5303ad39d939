"""Discrete parallel-beam line-integral transform and its exact adjoint.

Independent of the scanner geometry; shares the pixel-traversal tracer with
the system matrix, so forward and adjoint share identical sparse weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .siddon import trace_segment


@dataclass(frozen=True)
class RadonSpec:
    n_angles: int
    n_detectors: int
    detector_spacing: float

    def __post_init__(self):
        if self.n_angles < 1:
            raise ValidationError("n_angles must be >= 1")
        if self.n_detectors < 1 or self.n_detectors % 2 == 0:
            raise ValidationError("n_detectors must be odd so a centered bin exists")
        if not self.detector_spacing > 0:
            raise ValidationError("detector_spacing must be positive")

    @property
    def angles(self) -> np.ndarray:
        """Projection angles, uniform in [0, pi)."""
        return np.arange(self.n_angles) * np.pi / self.n_angles


def default_radon_spec(width: int, height: int, pixel_size: float,
                       n_angles: int = 180) -> RadonSpec:
    n_det = int(np.ceil(np.sqrt(2.0) * max(width, height)))
    if n_det % 2 == 0:
        n_det += 1
    return RadonSpec(n_angles, n_det, pixel_size)


class RadonOperator:
    """Sparse line-integral operator for one (spec, grid) combination."""

    def __init__(self, spec: RadonSpec, nx: int, ny: int, pixel_size: float):
        self.spec = spec
        self.nx = int(nx)
        self.ny = int(ny)
        self.pixel_size = float(pixel_size)
        self.matrix = self._build()

    def _build(self) -> sp.csr_matrix:
        spec = self.spec
        # Ray endpoints far outside the grid; offsets span the detector array
        # with the central bin through the origin.
        reach = np.hypot(self.nx, self.ny) * self.pixel_size
        offsets = (np.arange(spec.n_detectors) - (spec.n_detectors - 1) / 2.0) \
            * spec.detector_spacing
        n_rows = spec.n_angles * spec.n_detectors
        indptr = np.zeros(n_rows + 1, dtype=np.int64)
        indices_parts = []
        data_parts = []
        row = 0
        for theta in spec.angles:
            normal = np.array([np.cos(theta), np.sin(theta)])
            along = np.array([-np.sin(theta), np.cos(theta)])
            for t in offsets:
                p0 = t * normal - reach * along
                p1 = t * normal + reach * along
                pixels, lengths = trace_segment(p0, p1, self.nx, self.ny, self.pixel_size)
                indptr[row + 1] = indptr[row] + len(pixels)
                indices_parts.append(pixels)
                data_parts.append(lengths)
                row += 1
        indices = np.concatenate(indices_parts) if indices_parts else np.empty(0, dtype=np.int64)
        data = np.concatenate(data_parts) if data_parts else np.empty(0)
        return sp.csr_matrix((data, indices, indptr), shape=(n_rows, self.nx * self.ny))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Line integrals as an (n_angles, n_detectors) sinogram grid."""
        x = np.asarray(x, dtype=np.float64)
        if x.size != self.nx * self.ny:
            raise ValidationError(f"image has {x.size} pixels, operator expects {self.nx * self.ny}")
        return (self.matrix @ x.ravel()).reshape(self.spec.n_angles, self.spec.n_detectors)

    def adjoint(self, s: np.ndarray) -> np.ndarray:
        """Exact adjoint of forward(); returns an (ny, nx) image."""
        s = np.asarray(s, dtype=np.float64)
        if s.size != self.matrix.shape[0]:
            raise ValidationError(f"sinogram has {s.size} bins, operator expects {self.matrix.shape[0]}")
        return (self.matrix.T @ s.ravel()).reshape(self.ny, self.nx)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)


_OPERATOR_CACHE: dict[tuple, RadonOperator] = {}


def get_operator(spec: RadonSpec, nx: int, ny: int, pixel_size: float) -> RadonOperator:
    key = (spec.n_angles, spec.n_detectors, spec.detector_spacing, nx, ny, pixel_size)
    op = _OPERATOR_CACHE.get(key)
    if op is None:
        op = RadonOperator(spec, nx, ny, pixel_size)
        _OPERATOR_CACHE[key] = op
    return op


def radon_forward(spec: RadonSpec, x: np.ndarray, pixel_size: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("image must be 2D")
    return get_operator(spec, x.shape[1], x.shape[0], pixel_size).forward(x)


def radon_adjoint(spec: RadonSpec, s: np.ndarray, nx: int, ny: int,
                  pixel_size: float = 1.0) -> np.ndarray:
    return get_operator(spec, nx, ny, pixel_size).adjoint(s)
