"""Monte Carlo coincidence generation: trues, randoms, and single-scatters.

Every requested coincidence is a DETECTED one: generation keeps drawing until
both photons land on active crystals of an enumerated LOR, with a bounded
retry budget.  The event stream is split into fixed-size chunks, each driven
by its own seed sequence, so results are byte-identical for any worker count.
"""

from __future__ import annotations

import enum
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, SimulationError, ValidationError
from .geometry import Lor, Scanner
from .phantom import ActivityMap

_CHUNK_SIZE = 8192
_RETRY_FACTOR = 10_000  # proposal budget per requested event

PLST_MAGIC = b"PLST"
PSIN_MAGIC = b"PSIN"
_FORMAT_VERSION = 1


class EventKind(enum.IntEnum):
    TRUE = 0
    RANDOM = 1
    SCATTERED = 2


@dataclass(frozen=True)
class SimConfig:
    n_total: int
    p_random: float = 0.15
    p_scatter: float = 0.15
    acollinearity_half_angle_deg: float = 0.5
    hg_g: float = 0.98
    seed: int = 0
    scan_time: float = 60.0
    acollinearity_dist: str = "uniform"

    def __post_init__(self):
        if self.n_total < 0:
            raise ValidationError("n_total must be nonnegative")
        if not (0 <= self.p_random <= 1 and 0 <= self.p_scatter <= 1):
            raise ValidationError("fractions must lie in [0, 1]")
        if self.p_random + self.p_scatter > 1:
            raise ValidationError("p_random + p_scatter must not exceed 1")
        if not -1 < self.hg_g < 1:
            raise ValidationError("hg_g must lie in (-1, 1)")
        if self.acollinearity_half_angle_deg < 0:
            raise ValidationError("acollinearity half angle must be >= 0")
        if self.scan_time <= 0:
            raise ValidationError("scan_time must be positive")
        if self.acollinearity_dist not in ("uniform", "gaussian"):
            raise ValidationError("acollinearity_dist must be 'uniform' or 'gaussian'")


@dataclass(frozen=True)
class CoincidenceEvent:
    lor: Lor
    kind: EventKind
    emission_point: tuple[float, float] | None = None


@dataclass(frozen=True)
class ListModeSet:
    events: tuple[CoincidenceEvent, ...]
    sim_config: SimConfig
    scanner_hash: bytes

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class Sinogram:
    counts: np.ndarray
    scanner_hash: bytes

    def __post_init__(self):
        c = np.ascontiguousarray(self.counts, dtype=np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n_bins(self) -> int:
        return len(self.counts)


# -- elementary samplers ----------------------------------------------------

def sample_emission(amap: ActivityMap, rng: np.random.Generator) -> np.ndarray:
    """Draw one emission point: pixel ~ activity, position uniform in pixel."""
    return _sample_emissions(amap, rng, 1)[0]


def _sample_emissions(amap: ActivityMap, rng: np.random.Generator, n: int) -> np.ndarray:
    total = amap.total_activity
    if total <= 0:
        raise ValidationError("cannot sample emissions from an all-zero map")
    cdf = np.cumsum(amap.values.ravel()) / total
    flat = np.searchsorted(cdf, rng.random(n), side="right")
    flat = np.minimum(flat, amap.values.size - 1)
    iy, ix = np.divmod(flat, amap.width)
    ps = amap.pixel_size
    x = (ix - amap.width / 2.0 + rng.random(n)) * ps
    y = (iy - amap.height / 2.0 + rng.random(n)) * ps
    return np.stack([x, y], axis=1)


def sample_acollinear_pair(rng: np.random.Generator, half_angle_deg: float,
                           dist: str = "uniform") -> tuple[np.ndarray, np.ndarray]:
    """Photon pair at 180 degrees plus a small acollinearity deviation."""
    d1, d2 = _sample_acollinear_pairs(rng, half_angle_deg, 1, dist)
    return d1[0], d2[0]


def _sample_deltas(rng, half_angle_deg, n, dist):
    half = math.radians(half_angle_deg)
    if half == 0.0:
        return np.zeros(n)
    if dist == "uniform":
        return rng.uniform(-half, half, n)
    # Truncated Gaussian with sigma = half/2, clipped by resampling.
    out = rng.normal(0.0, half / 2.0, n)
    bad = np.abs(out) > half
    while np.any(bad):
        out[bad] = rng.normal(0.0, half / 2.0, int(bad.sum()))
        bad = np.abs(out) > half
    return out


def _sample_acollinear_pairs(rng, half_angle_deg, n, dist="uniform"):
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    delta = _sample_deltas(rng, half_angle_deg, n, dist)
    d1 = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    # Rotate d1 by delta then negate, so delta = 0 gives exactly -d1.
    cos_d, sin_d = np.cos(delta), np.sin(delta)
    d2 = np.stack([-(cos_d * d1[:, 0] - sin_d * d1[:, 1]),
                   -(sin_d * d1[:, 0] + cos_d * d1[:, 1])], axis=1)
    return d1, d2


def hg_pdf(theta, g: float):
    """Henyey-Greenstein phase function (1-g^2)/(1+g^2-2g cos(theta))^(3/2)."""
    if not -1 < g < 1:
        raise ValidationError("asymmetry factor g must lie in (-1, 1)")
    return (1.0 - g * g) / (1.0 + g * g - 2.0 * g * np.cos(theta)) ** 1.5


def _sample_hg_cos(rng: np.random.Generator, g: float, n: int) -> np.ndarray:
    xi = rng.random(n)
    if abs(g) < 1e-12:
        return 2.0 * xi - 1.0
    frac = (1.0 - g * g) / (1.0 - g + 2.0 * g * xi)
    return np.clip((1.0 + g * g - frac * frac) / (2.0 * g), -1.0, 1.0)


def sample_hg_deflection(rng: np.random.Generator, g: float) -> float:
    """Deflection angle with cos(theta) drawn by the closed-form HG inverse CDF."""
    if not -1 < g < 1:
        raise ValidationError("asymmetry factor g must lie in (-1, 1)")
    return float(np.arccos(_sample_hg_cos(rng, g, 1)[0]))


# -- scan simulation --------------------------------------------------------

def _rotation_steps(rng, scanner: Scanner, config: SimConfig, n: int) -> np.ndarray:
    # Event times are uniform over the scan; the constant angular velocity
    # maps them to ring angles and thence to discrete steps.
    t = rng.uniform(0.0, config.scan_time, n)
    angle = np.mod(scanner.config.omega0 * t, 2.0 * math.pi)
    n_steps = scanner.config.n_rotation_steps
    return np.minimum((angle / (2.0 * math.pi) * n_steps).astype(np.int64), n_steps - 1)


def _exit_distance(points: np.ndarray, dirs: np.ndarray, half_w: float, half_h: float) -> np.ndarray:
    """Distance from each interior point to the image rectangle boundary."""
    with np.errstate(divide="ignore"):
        tx = np.where(dirs[:, 0] > 0, (half_w - points[:, 0]) / dirs[:, 0],
                      np.where(dirs[:, 0] < 0, (-half_w - points[:, 0]) / dirs[:, 0], np.inf))
        ty = np.where(dirs[:, 1] > 0, (half_h - points[:, 1]) / dirs[:, 1],
                      np.where(dirs[:, 1] < 0, (-half_h - points[:, 1]) / dirs[:, 1], np.inf))
    return np.maximum(np.minimum(tx, ty), 0.0)


def _rotate(dirs: np.ndarray, angle: np.ndarray) -> np.ndarray:
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    return np.stack([cos_a * dirs[:, 0] - sin_a * dirs[:, 1],
                     sin_a * dirs[:, 0] + cos_a * dirs[:, 1]], axis=1)


class _ChunkGenerator:
    """Generates the detected events of one deterministic chunk."""

    def __init__(self, amap: ActivityMap, scanner: Scanner, config: SimConfig):
        self.amap = amap
        self.scanner = scanner
        self.config = config
        self.pair_index = scanner.pair_index
        self.n_pairs = len(scanner.fov_pairs)

    def _detected(self, origins1, dirs1, origins2, dirs2, steps):
        """Mask + pair ranks for proposals whose both photons are detected."""
        i1 = self.scanner.detect_rays(origins1, dirs1, steps)
        i2 = self.scanner.detect_rays(origins2, dirs2, steps)
        ok = (i1 >= 0) & (i2 >= 0) & (i1 != i2)
        rank = np.full(len(steps), -1, dtype=np.int64)
        rank[ok] = self.pair_index[i1[ok], i2[ok]]
        ok &= rank >= 0
        lo = np.minimum(i1, i2)
        hi = np.maximum(i1, i2)
        return ok, lo, hi, rank

    def _propose(self, rng, kind: EventKind, n: int):
        amap, cfg = self.amap, self.config
        steps = _rotation_steps(rng, self.scanner, cfg, n)
        if kind == EventKind.RANDOM:
            # Two photons from two independent annihilations caught in the
            # same time window (same rotation step).
            e1 = _sample_emissions(amap, rng, n)
            e2 = _sample_emissions(amap, rng, n)
            phi1 = rng.uniform(0.0, 2.0 * math.pi, n)
            phi2 = rng.uniform(0.0, 2.0 * math.pi, n)
            d1 = np.stack([np.cos(phi1), np.sin(phi1)], axis=1)
            d2 = np.stack([np.cos(phi2), np.sin(phi2)], axis=1)
            return e1, d1, e2, d2, steps, e1
        emissions = _sample_emissions(amap, rng, n)
        d1, d2 = _sample_acollinear_pairs(rng, cfg.acollinearity_half_angle_deg, n,
                                          cfg.acollinearity_dist)
        if kind == EventKind.TRUE:
            return emissions, d1, emissions, d2, steps, emissions
        # Scattered: one photon deflects by an HG angle at a site chosen
        # uniformly along its remaining path inside the image support.
        which = rng.random(n) < 0.5
        scat_dir = np.where(which[:, None], d1, d2)
        half_w = amap.width * amap.pixel_size / 2.0
        half_h = amap.height * amap.pixel_size / 2.0
        t_exit = _exit_distance(emissions, scat_dir, half_w, half_h)
        sites = emissions + (rng.random(n) * t_exit)[:, None] * scat_dir
        theta = np.arccos(_sample_hg_cos(rng, cfg.hg_g, n))
        sign = np.where(rng.random(n) < 0.5, 1.0, -1.0)
        new_dir = _rotate(scat_dir, sign * theta)
        o1 = np.where(which[:, None], sites, emissions)
        dir1 = np.where(which[:, None], new_dir, d1)
        o2 = np.where(which[:, None], emissions, sites)
        dir2 = np.where(which[:, None], d2, new_dir)
        return o1, dir1, o2, dir2, steps, emissions

    def generate(self, seed_key: tuple, m: int) -> list[CoincidenceEvent]:
        rng = np.random.default_rng(np.random.SeedSequence(seed_key))
        cfg = self.config
        u = rng.random(m)
        kinds = np.full(m, EventKind.TRUE, dtype=np.int64)
        kinds[u < cfg.p_random] = EventKind.RANDOM
        kinds[(u >= cfg.p_random) & (u < cfg.p_random + cfg.p_scatter)] = EventKind.SCATTERED

        queues: dict[EventKind, list] = {}
        for kind in EventKind:
            need = int(np.sum(kinds == kind))
            if need:
                queues[kind] = self._generate_kind(rng, kind, need)
        out = []
        cursors = {kind: 0 for kind in queues}
        ids = self.scanner.active_ids
        pairs = self.scanner.fov_pairs
        for k in kinds:
            kind = EventKind(k)
            lo, hi, rank, step, em = queues[kind][cursors[kind]]
            cursors[kind] += 1
            lor = Lor(ids[lo], ids[hi], int(step))
            out.append(CoincidenceEvent(lor, kind, (float(em[0]), float(em[1]))))
        return out

    def _generate_kind(self, rng, kind: EventKind, need: int) -> list:
        collected = []
        budget = _RETRY_FACTOR * need
        spent = 0
        while len(collected) < need:
            deficit = need - len(collected)
            batch = min(max(2 * deficit, 64), 16384, budget - spent)
            if batch <= 0:
                raise SimulationError(
                    f"retry budget exhausted after {spent} proposals for {need} "
                    f"{kind.name.lower()} events; geometry may be undetectable")
            spent += batch
            o1, d1, o2, d2, steps, emissions = self._propose(rng, kind, batch)
            ok, lo, hi, rank = self._detected(o1, d1, o2, d2, steps)
            for idx in np.flatnonzero(ok):
                collected.append((int(lo[idx]), int(hi[idx]), int(rank[idx]),
                                  int(steps[idx]), emissions[idx]))
                if len(collected) == need:
                    break
        return collected


def simulate_scan(amap: ActivityMap, scanner: Scanner, config: SimConfig,
                  n_workers: int = 1) -> ListModeSet:
    """Simulate exactly ``config.n_total`` detected coincidences.

    Deterministic given (seed, configs, scanner, map); independent of
    ``n_workers`` because the stream is chunked with per-chunk seeds and
    merged in chunk order.
    """
    if amap.total_activity <= 0:
        raise ValidationError("cannot simulate a scan of an all-zero activity map")
    gen = _ChunkGenerator(amap, scanner, config)
    n = config.n_total
    chunks = [(i, min(_CHUNK_SIZE, n - i * _CHUNK_SIZE))
              for i in range((n + _CHUNK_SIZE - 1) // _CHUNK_SIZE)]

    def run(chunk):
        idx, m = chunk
        return gen.generate((config.seed, idx), m)

    if n_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    events = tuple(ev for chunk_events in results for ev in chunk_events)
    return ListModeSet(events, config, scanner.config.config_hash())


def bin_to_sinogram(listmode: ListModeSet, scanner: Scanner) -> Sinogram:
    """Histogram list-mode events into the enumerate_lors bin ordering."""
    if listmode.scanner_hash != scanner.config.config_hash():
        raise DataError("list-mode set was simulated with a different scanner")
    counts = np.zeros(scanner.n_bins, dtype=np.int64)
    for ev in listmode.events:
        counts[scanner.lor_index(ev.lor)] += 1
    return Sinogram(counts, scanner.config.config_hash())


# -- diagnostics ------------------------------------------------------------

def pair_detection_rate(scanner: Scanner, point, n_samples: int,
                        rng: np.random.Generator, half_angle_deg: float = 0.0) -> float:
    """Fraction of isotropic photon pairs from a fixed point that are detected,
    averaged over uniformly random rotation steps."""
    pts = np.tile(np.asarray(point, dtype=np.float64), (n_samples, 1))
    d1, d2 = _sample_acollinear_pairs(rng, half_angle_deg, n_samples)
    steps = rng.integers(0, scanner.config.n_rotation_steps, n_samples)
    i1 = scanner.detect_rays(pts, d1, steps)
    i2 = scanner.detect_rays(pts, d2, steps)
    ok = (i1 >= 0) & (i2 >= 0) & (i1 != i2)
    ok &= np.where(ok, scanner.pair_index[i1, i2], -1) >= 0
    return float(np.mean(ok))


# -- file formats -----------------------------------------------------------

_SIM_HEADER = struct.Struct("<Qddddqd B7x")  # fixed-width SimConfig fields


def save_listmode(listmode: ListModeSet, scanner: Scanner, path) -> None:
    """Write a PLST v1 file (scanner hash, sim config, u32 lor index + u8 kind)."""
    cfg = listmode.sim_config
    header = PLST_MAGIC + bytes([_FORMAT_VERSION])
    header += listmode.scanner_hash
    header += _SIM_HEADER.pack(cfg.n_total, cfg.p_random, cfg.p_scatter,
                               cfg.acollinearity_half_angle_deg, cfg.hg_g,
                               cfg.seed, cfg.scan_time,
                               0 if cfg.acollinearity_dist == "uniform" else 1)
    rec = np.empty(len(listmode.events), dtype=[("lor", "<u4"), ("kind", "u1")])
    for i, ev in enumerate(listmode.events):
        rec[i] = (scanner.lor_index(ev.lor), int(ev.kind))
    Path(path).write_bytes(header + rec.tobytes())


def load_listmode(path, scanner: Scanner) -> ListModeSet:
    raw = Path(path).read_bytes()
    base = 5 + 32 + _SIM_HEADER.size
    if len(raw) < base or raw[:4] != PLST_MAGIC or raw[4] != _FORMAT_VERSION:
        raise FormatError(f"{path}: not a PLST v1 file")
    scanner_hash = raw[5:37]
    if scanner_hash != scanner.config.config_hash():
        raise DataError(f"{path}: scanner geometry hash mismatch")
    (n_total, p_random, p_scatter, half_angle, hg_g, seed, scan_time,
     dist_code) = _SIM_HEADER.unpack_from(raw, 37)
    cfg = SimConfig(n_total=n_total, p_random=p_random, p_scatter=p_scatter,
                    acollinearity_half_angle_deg=half_angle, hg_g=hg_g, seed=seed,
                    scan_time=scan_time,
                    acollinearity_dist="uniform" if dist_code == 0 else "gaussian")
    rec = np.frombuffer(raw, dtype=[("lor", "<u4"), ("kind", "u1")], offset=base)
    lors = scanner.enumerate_lors()
    events = []
    for lor_idx, kind in rec:
        if lor_idx >= len(lors):
            raise DataError(f"{path}: LOR index {lor_idx} out of range")
        events.append(CoincidenceEvent(lors[lor_idx], EventKind(kind)))
    return ListModeSet(tuple(events), cfg, scanner_hash)


def save_sinogram(sino: Sinogram, path) -> None:
    """Write a PSIN v1 file (u32 bin count, u32 counts)."""
    header = PSIN_MAGIC + bytes([_FORMAT_VERSION]) + struct.pack("<I", sino.n_bins)
    Path(path).write_bytes(header + sino.counts.astype("<u4").tobytes())


def load_sinogram(path, scanner: Scanner | None = None) -> Sinogram:
    raw = Path(path).read_bytes()
    if len(raw) < 9 or raw[:4] != PSIN_MAGIC or raw[4] != _FORMAT_VERSION:
        raise FormatError(f"{path}: not a PSIN v1 file")
    (n_bins,) = struct.unpack_from("<I", raw, 5)
    if len(raw) != 9 + 4 * n_bins:
        raise FormatError(f"{path}: truncated PSIN payload")
    counts = np.frombuffer(raw, dtype="<u4", offset=9).astype(np.int64)
    scanner_hash = scanner.config.config_hash() if scanner is not None else b"\0" * 32
    if scanner is not None and n_bins != scanner.n_bins:
        raise DataError(f"{path}: {n_bins} bins does not match scanner ({scanner.n_bins})")
    return Sinogram(counts, scanner_hash)
