"""Sparse system matrix: LOR bins x pixels, with chord-length weights."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError, FormatError, ValidationError
from .geometry import Scanner
from .siddon import trace_segment

PSYS_MAGIC = b"PSYS"
_FORMAT_VERSION = 1


def grid_hash(nx: int, ny: int, pixel_size: float) -> bytes:
    text = f"grid:{nx}x{ny}@{pixel_size!r}"
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass(frozen=True)
class SystemMatrix:
    """CSR operator from pixel activities to expected per-bin counts."""

    matrix: sp.csr_matrix
    nx: int
    ny: int
    pixel_size: float
    scanner_hash: bytes
    grid_hash: bytes

    @property
    def n_bins(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.matrix.shape[1]


def build_system_matrix(scanner: Scanner, nx: int, ny: int,
                        pixel_size: float) -> SystemMatrix:
    """Trace every enumerated LOR chord through the pixel grid.

    Bins whose chord misses the grid keep an empty row.  The build is
    sequential and bit-reproducible.
    """
    half_diag = math.hypot(nx * pixel_size, ny * pixel_size) / 2.0
    if half_diag > scanner.config.fov_radius:
        raise ValidationError(
            f"grid half-diagonal {half_diag:.2f} mm exceeds scanner FOV radius "
            f"{scanner.config.fov_radius:.2f} mm")
    starts, ends = scanner.lor_endpoints()
    n_bins = len(starts)
    indptr = np.zeros(n_bins + 1, dtype=np.int64)
    indices_parts = []
    data_parts = []
    for i in range(n_bins):
        pixels, lengths = trace_segment(starts[i], ends[i], nx, ny, pixel_size)
        indptr[i + 1] = indptr[i] + len(pixels)
        indices_parts.append(pixels)
        data_parts.append(lengths)
    indices = np.concatenate(indices_parts) if indices_parts else np.empty(0, dtype=np.int64)
    data = np.concatenate(data_parts) if data_parts else np.empty(0)
    matrix = sp.csr_matrix((data, indices, indptr), shape=(n_bins, nx * ny))
    return SystemMatrix(matrix, nx, ny, pixel_size,
                        scanner.config.config_hash(), grid_hash(nx, ny, pixel_size))


def forward_project(A: SystemMatrix, x: np.ndarray) -> np.ndarray:
    """Expected counts per bin: (Ax)_i = sum_j a_ij x_j."""
    x = np.asarray(x, dtype=np.float64)
    if x.size != A.n_pixels:
        raise ValidationError(f"image has {x.size} pixels, matrix expects {A.n_pixels}")
    return A.matrix @ x.ravel()


def back_project(A: SystemMatrix, y: np.ndarray) -> np.ndarray:
    """Adjoint projection: returns the (ny, nx) image A^T y."""
    y = np.asarray(y, dtype=np.float64)
    if y.size != A.n_bins:
        raise ValidationError(f"data has {y.size} bins, matrix expects {A.n_bins}")
    return (A.matrix.T @ y.ravel()).reshape(A.ny, A.nx)


def sensitivity(A: SystemMatrix) -> np.ndarray:
    """Column sums of the matrix as a (ny, nx) image; cached per matrix."""
    cached = getattr(A, "_sensitivity", None)
    if cached is None:
        cached = np.asarray(A.matrix.sum(axis=0)).reshape(A.ny, A.nx)
        cached.setflags(write=False)
        object.__setattr__(A, "_sensitivity", cached)
    return cached


def save_system_matrix(A: SystemMatrix, path) -> None:
    """Write a PSYS v1 cache file keyed by scanner and grid hashes."""
    m = A.matrix
    parts = [PSYS_MAGIC, bytes([_FORMAT_VERSION]), A.scanner_hash, A.grid_hash,
             struct.pack("<IIIf", A.n_bins, A.nx, A.ny, A.pixel_size)]
    indptr = m.indptr
    for i in range(A.n_bins):
        lo, hi = indptr[i], indptr[i + 1]
        parts.append(struct.pack("<II", i, hi - lo))
        row = np.empty(hi - lo, dtype=[("pixel", "<u4"), ("weight", "<f4")])
        row["pixel"] = m.indices[lo:hi]
        row["weight"] = m.data[lo:hi]
        parts.append(row.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_system_matrix(path, scanner: Scanner | None = None) -> SystemMatrix:
    """Load a PSYS cache; verifies hashes against ``scanner`` when given."""
    raw = Path(path).read_bytes()
    if len(raw) < 85 or raw[:4] != PSYS_MAGIC or raw[4] != _FORMAT_VERSION:
        raise FormatError(f"{path}: not a PSYS v1 file")
    scanner_hash = raw[5:37]
    ghash = raw[37:69]
    n_bins, nx, ny, pixel_size = struct.unpack_from("<IIIf", raw, 69)
    if scanner is not None and scanner_hash != scanner.config.config_hash():
        raise DataError(f"{path}: geometry mismatch with current scanner")
    offset = 85
    indptr = np.zeros(n_bins + 1, dtype=np.int64)
    indices_parts = []
    data_parts = []
    for i in range(n_bins):
        if offset + 8 > len(raw):
            raise FormatError(f"{path}: truncated PSYS row table")
        bin_idx, nnz = struct.unpack_from("<II", raw, offset)
        if bin_idx != i:
            raise FormatError(f"{path}: out-of-order bin {bin_idx}")
        offset += 8
        if offset + 8 * nnz > len(raw):
            raise FormatError(f"{path}: truncated PSYS row payload")
        row = np.frombuffer(raw, dtype=[("pixel", "<u4"), ("weight", "<f4")],
                            count=nnz, offset=offset)
        offset += 8 * nnz
        indptr[i + 1] = indptr[i] + nnz
        indices_parts.append(row["pixel"].astype(np.int64))
        data_parts.append(row["weight"].astype(np.float64))
    if offset != len(raw):
        raise FormatError(f"{path}: trailing bytes in PSYS file")
    indices = np.concatenate(indices_parts) if indices_parts else np.empty(0, dtype=np.int64)
    data = np.concatenate(data_parts) if data_parts else np.empty(0)
    matrix = sp.csr_matrix((data, indices, indptr), shape=(n_bins, nx * ny))
    return SystemMatrix(matrix, nx, ny, float(pixel_size), scanner_hash, ghash)
