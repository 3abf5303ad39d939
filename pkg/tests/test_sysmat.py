import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tomopet import SystemMatrix, ValidationError, back_project, \
    build_system_matrix, forward_project, sensitivity
from tomopet.errors import DataError, FormatError
from tomopet.geometry import ScannerConfig, build_scanner
from tomopet.siddon import clipped_chord_length, trace_segment
from tomopet.sysmat import load_system_matrix, save_system_matrix

from small_scanner_params import SMALL_BASE


def _liang_barsky_chord(p0, p1, nx, ny, ps):
    """Independent box-clipping oracle for the in-grid chord length."""
    x0, y0 = p0
    x1, y1 = p1
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 + nx * ps / 2.0), (dx, nx * ps / 2.0 - x0),
                 (-dy, y0 + ny * ps / 2.0), (dy, ny * ps / 2.0 - y0)):
        if p == 0.0:
            if q < 0:
                return 0.0
        else:
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
    if t0 >= t1:
        return 0.0
    return (t1 - t0) * math.hypot(dx, dy)


class TestTraceSegment:
    def test_horizontal_center_row(self):
        # Length 8 segment through the middle of a 4x4 unit grid crosses
        # all 4 columns of row 1 for exactly 1 mm each.
        pixels, lengths = trace_segment((-10.0, -0.5), (10.0, -0.5), 4, 4, 1.0)
        assert list(pixels) == [4, 5, 6, 7]
        assert np.allclose(lengths, 1.0, atol=1e-12)

    def test_diagonal_unit_pixels(self):
        # Main diagonal of a 2x2 unit grid: two pixels, sqrt(2) each.
        pixels, lengths = trace_segment((-1.0, -1.0), (1.0, 1.0), 2, 2, 1.0)
        assert list(pixels) == [0, 3]
        assert np.allclose(lengths, math.sqrt(2.0), atol=1e-12)

    def test_miss_returns_empty(self):
        pixels, lengths = trace_segment((-10.0, 50.0), (10.0, 50.0), 4, 4, 1.0)
        assert len(pixels) == 0 and len(lengths) == 0

    def test_degenerate_segment(self):
        pixels, lengths = trace_segment((0.1, 0.1), (0.1, 0.1), 4, 4, 1.0)
        assert len(pixels) == 0

    def test_lengths_positive_and_bounded_by_diagonal(self, rng):
        diag = math.sqrt(2.0) * 1.5
        for _ in range(50):
            p0 = rng.uniform(-20, 20, 2)
            p1 = rng.uniform(-20, 20, 2)
            _, lengths = trace_segment(p0, p1, 8, 8, 1.5)
            assert np.all(lengths > 0)
            assert np.all(lengths <= diag + 1e-9)

    def test_indices_sorted_unique(self, rng):
        for _ in range(50):
            p0 = rng.uniform(-20, 20, 2)
            p1 = rng.uniform(-20, 20, 2)
            pixels, _ = trace_segment(p0, p1, 8, 8, 1.5)
            assert np.all(np.diff(pixels) > 0)

    @given(st.floats(-30, 30), st.floats(-30, 30), st.floats(-30, 30), st.floats(-30, 30))
    @settings(max_examples=200, deadline=None)
    def test_total_length_matches_clip_oracle(self, x0, y0, x1, y1):
        nx, ny, ps = 7, 5, 1.3
        _, lengths = trace_segment((x0, y0), (x1, y1), nx, ny, ps)
        oracle = _liang_barsky_chord((x0, y0), (x1, y1), nx, ny, ps)
        assert float(lengths.sum()) == pytest.approx(oracle, abs=1e-9)

    def test_clipped_chord_agrees_with_oracle(self, rng):
        for _ in range(100):
            p0 = rng.uniform(-30, 30, 2)
            p1 = rng.uniform(-30, 30, 2)
            got = clipped_chord_length(p0, p1, 9, 6, 0.8)
            assert got == pytest.approx(_liang_barsky_chord(p0, p1, 9, 6, 0.8), abs=1e-9)


class TestBuildSystemMatrix:
    def test_shape(self, small_scanner, small_matrix):
        assert small_matrix.n_bins == small_scanner.n_bins
        assert small_matrix.n_pixels == 32 * 32
        assert (small_matrix.nx, small_matrix.ny) == (32, 32)

    def test_nonnegative_weights(self, small_matrix):
        assert small_matrix.matrix.nnz > 0
        assert np.all(small_matrix.matrix.data > 0)

    def test_row_sums_equal_clipped_chords(self, small_scanner, small_matrix):
        starts, ends = small_scanner.lor_endpoints()
        rows = np.asarray(small_matrix.matrix.sum(axis=1)).ravel()
        idx = np.linspace(0, small_matrix.n_bins - 1, 100).astype(int)
        for i in idx:
            chord = clipped_chord_length(starts[i], ends[i], 32, 32, 1.2)
            assert rows[i] == pytest.approx(chord, abs=1e-9)

    def test_grid_must_fit_in_fov(self, small_scanner):
        with pytest.raises(ValidationError):
            build_system_matrix(small_scanner, 64, 64, 1.2)

    def test_reproducible(self, small_scanner, small_matrix):
        again = build_system_matrix(small_scanner, 32, 32, 1.2)
        assert np.array_equal(again.matrix.indptr, small_matrix.matrix.indptr)
        assert np.array_equal(again.matrix.indices, small_matrix.matrix.indices)
        assert np.array_equal(again.matrix.data, small_matrix.matrix.data)


class TestProjections:
    def test_forward_matches_dense(self, small_matrix, rng):
        x = rng.random(32 * 32)
        dense = small_matrix.matrix.toarray()
        assert np.allclose(forward_project(small_matrix, x), dense @ x, atol=1e-12)

    def test_adjoint_identity(self, small_matrix, rng):
        # <Ax, y> == <x, A^T y> must hold to near machine precision because
        # both directions reuse the same stored weights.
        for _ in range(5):
            x = rng.random(32 * 32)
            y = rng.random(small_matrix.n_bins)
            lhs = float(forward_project(small_matrix, x) @ y)
            rhs = float(x @ back_project(small_matrix, y).ravel())
            assert abs(lhs - rhs) <= 1e-12 * max(abs(lhs), 1.0)

    def test_back_project_shape(self, small_matrix):
        img = back_project(small_matrix, np.ones(small_matrix.n_bins))
        assert img.shape == (32, 32)

    def test_size_mismatch_rejected(self, small_matrix):
        with pytest.raises(ValidationError):
            forward_project(small_matrix, np.ones(10))
        with pytest.raises(ValidationError):
            back_project(small_matrix, np.ones(10))

    def test_sensitivity_is_backprojected_ones(self, small_matrix):
        s = sensitivity(small_matrix)
        assert np.allclose(s, back_project(small_matrix, np.ones(small_matrix.n_bins)),
                           atol=1e-12)
        assert np.all(s >= 0)

    def test_central_pixels_sensitive(self, small_matrix):
        s = sensitivity(small_matrix)
        assert np.all(s[14:18, 14:18] > 0)


class TestSensitivitySymmetry:
    def test_full_ring_symmetry_orbit(self, full_ring_scanner):
        # On a fully-equipped ring the geometry has the dihedral symmetry of
        # the square grid, so the 8 pixels in one symmetry orbit must agree.
        A = build_system_matrix(full_ring_scanner, 32, 32, 1.2)
        s = sensitivity(A)
        i, j = 10, 13
        orbit = [s[i, j], s[i, 31 - j], s[31 - i, j], s[31 - i, 31 - j],
                 s[j, i], s[j, 31 - i], s[31 - j, i], s[31 - j, 31 - i]]
        assert max(orbit) / min(orbit) == pytest.approx(1.0, abs=1e-9)

    def test_partial_ring_rotation_fills_coverage(self, small_scanner):
        # Even with only 12 of 20 sectors equipped, a full rotation leaves
        # no dead pixels in the central region.
        A = build_system_matrix(small_scanner, 32, 32, 1.2)
        s = sensitivity(A)
        yy, xx = np.mgrid[0:32, 0:32]
        r = np.hypot((xx + 0.5 - 16) * 1.2, (yy + 0.5 - 16) * 1.2)
        assert np.all(s[r < 15.0] > 0)


class TestPsysRoundTrip:
    def test_round_trip_weights_preserved(self, tmp_path, small_scanner, small_matrix):
        path = tmp_path / "cache.psys"
        save_system_matrix(small_matrix, path)
        loaded = load_system_matrix(path, small_scanner)
        assert loaded.n_bins == small_matrix.n_bins
        assert np.array_equal(loaded.matrix.indptr, small_matrix.matrix.indptr)
        assert np.array_equal(loaded.matrix.indices, small_matrix.matrix.indices)
        # Weights are stored in f32; round trip is exact at f32 resolution.
        assert np.array_equal(loaded.matrix.data,
                              small_matrix.matrix.data.astype(np.float32).astype(np.float64))

    def test_geometry_mismatch_rejected(self, tmp_path, small_matrix, full_ring_scanner):
        path = tmp_path / "cache.psys"
        save_system_matrix(small_matrix, path)
        with pytest.raises(DataError):
            load_system_matrix(path, full_ring_scanner)

    def test_truncated_rejected(self, tmp_path, small_matrix):
        path = tmp_path / "cache.psys"
        save_system_matrix(small_matrix, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_system_matrix(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.psys"
        path.write_bytes(b"NOPE" + b"\0" * 100)
        with pytest.raises(FormatError):
            load_system_matrix(path)
