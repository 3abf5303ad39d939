"""Command-line driver for the simulation / reconstruction / UQ pipeline.

Exit codes: 0 success, 2 validation error, 3 I/O error, 4 internal error.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import events, mlem, phantom, radon, sysmat, uq
from .errors import DataError, FormatError, TomopetError, ValidationError
from .geometry import ScannerConfig, build_scanner
from .losses import LossWeights, combine_objective, consistency_loss, \
    diversity_loss, first_moment_loss

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

DOSE_PRESETS = {"lpet": 25_000_000, "vlpet": 5_000_000, "vlpet-adni": 2_000_000}


def pipeline_errors(func):
    """Map exceptions to the stable exit-code contract with one-line output."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ValidationError, FormatError, DataError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except click.exceptions.Exit:
            raise
        except TomopetError as exc:
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(EXIT_INTERNAL)

    return wrapper


def _load_scanner(path):
    return build_scanner(ScannerConfig.load(path))


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_provenance(out_dir: Path, name: str, doc: dict) -> Path:
    path = out_dir / name
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


@click.group()
def main():
    """PET scan simulation, MLEM reconstruction, and UQ toolkit."""


@main.command()
@click.option("--phantom", "phantom_path", required=True, type=click.Path())
@click.option("--scanner", "scanner_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", default=0, type=int)
@click.option("--n-total", default=10_000, type=int)
@click.option("--p-random", default=0.15, type=float)
@click.option("--p-scatter", default=0.15, type=float)
@click.option("--half-angle", default=0.5, type=float, help="Acollinearity half angle, degrees.")
@click.option("--hg-g", default=0.98, type=float)
@click.option("--scan-time", default=60.0, type=float)
@click.option("--workers", default=1, type=int)
@pipeline_errors
def simulate(phantom_path, scanner_path, out_dir, seed, n_total, p_random,
             p_scatter, half_angle, hg_g, scan_time, workers):
    """Simulate a scan: write list-mode, sinogram, and provenance files."""
    amap = phantom.load_image(phantom_path)
    scanner = _load_scanner(scanner_path)
    cfg = events.SimConfig(n_total=n_total, p_random=p_random, p_scatter=p_scatter,
                           acollinearity_half_angle_deg=half_angle, hg_g=hg_g,
                           seed=seed, scan_time=scan_time)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    listmode = events.simulate_scan(amap, scanner, cfg, n_workers=workers)
    sino = events.bin_to_sinogram(listmode, scanner)
    events.save_listmode(listmode, scanner, out / "listmode.plst")
    events.save_sinogram(sino, out / "sinogram.psin")
    _write_provenance(out, "provenance.json", {
        "command": "simulate",
        "sim_config": asdict(cfg),
        "scanner_hash": scanner.config.config_hash().hex(),
        "phantom_sha256": _sha256_file(phantom_path),
        "outputs": {"listmode": _sha256_file(out / "listmode.plst"),
                    "sinogram": _sha256_file(out / "sinogram.psin")},
    })
    click.echo(f"simulated {len(listmode)} coincidences -> {out}")


@main.command()
@click.option("--sinogram", "sinogram_path", required=True, type=click.Path())
@click.option("--scanner", "scanner_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--width", default=64, type=int)
@click.option("--height", default=64, type=int)
@click.option("--pixel-size", default=1.0, type=float)
@click.option("--iterations", default=50, type=int)
@click.option("--epsilon", default=1e-12, type=float)
@click.option("--init", "initial_value", default=1.0, type=float)
@click.option("--matrix-cache", default=None, type=click.Path())
@pipeline_errors
def reconstruct(sinogram_path, scanner_path, out_dir, width, height, pixel_size,
                iterations, epsilon, initial_value, matrix_cache):
    """MLEM-reconstruct a sinogram; writes recon.pimg and loglik.csv."""
    scanner = _load_scanner(scanner_path)
    sino = events.load_sinogram(sinogram_path, scanner)
    cfg = mlem.MlemConfig(n_iterations=iterations, epsilon=epsilon,
                          initial_value=initial_value)
    if matrix_cache is not None and Path(matrix_cache).exists():
        try:
            A = sysmat.load_system_matrix(matrix_cache, scanner)
        except DataError:
            raise DataError(f"{matrix_cache}: geometry mismatch") from None
        if A.grid_hash != sysmat.grid_hash(width, height, pixel_size):
            raise DataError(f"{matrix_cache}: geometry mismatch")
    else:
        A = sysmat.build_system_matrix(scanner, width, height, pixel_size)
        if matrix_cache is not None:
            sysmat.save_system_matrix(A, matrix_cache)
    image, trace = mlem.mlem_reconstruct(A, sino.counts, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    phantom.save_image(image, out / "recon.pimg")
    with open(out / "loglik.csv", "w", encoding="utf-8") as fh:
        fh.write("iteration,loglik\n")
        for i, ll in enumerate(trace, start=1):
            fh.write(f"{i},{ll!r}\n")
    _write_provenance(out, "provenance.json", {
        "command": "reconstruct",
        "mlem_config": asdict(cfg),
        "grid": {"width": width, "height": height, "pixel_size": pixel_size},
        "scanner_hash": scanner.config.config_hash().hex(),
        "sinogram_sha256": _sha256_file(sinogram_path),
        "outputs": {"recon": _sha256_file(out / "recon.pimg")},
    })
    click.echo(f"reconstructed {width}x{height} image -> {out}")


@main.command()
@click.option("--volume-dir", required=True, type=click.Path())
@click.option("--scanner", "scanner_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--dose", type=click.Choice(sorted(DOSE_PRESETS)), default=None)
@click.option("--n-total", default=None, type=int,
              help="Explicit whole-volume event budget (overrides --dose).")
@click.option("--seed", default=0, type=int)
@click.option("--iterations", default=50, type=int)
@click.option("--pixel-size", default=None, type=float,
              help="Reconstruction pixel size; defaults to the phantom's.")
@click.option("--test-fraction", default=0.2, type=float)
@pipeline_errors
def dataset(volume_dir, scanner_path, out_dir, dose, n_total, seed, iterations,
            pixel_size, test_fraction):
    """Simulate + reconstruct every slice of a volume and write a manifest."""
    slice_paths = sorted(Path(volume_dir).glob("*.pimg"))
    if not slice_paths:
        raise ValidationError(f"no .pimg slices found in {volume_dir}")
    if n_total is None:
        if dose is None:
            raise ValidationError("either --dose or --n-total is required")
        n_total = DOSE_PRESETS[dose]
    volume = phantom.PhantomVolume(tuple(phantom.load_image(p) for p in slice_paths))
    budgets = phantom.slice_event_budget(volume, n_total)
    scanner = _load_scanner(scanner_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        first = volume.slices[0]
        ps = pixel_size if pixel_size is not None else first.pixel_size
        A = sysmat.build_system_matrix(scanner, first.width, first.height, ps)
        n_test = int(math.ceil(test_fraction * len(slice_paths)))
        entries = []
        slice_provenance = []
        for i, (src, amap, budget) in enumerate(zip(slice_paths, volume.slices, budgets)):
            cfg = events.SimConfig(n_total=budget, seed=seed + i)
            listmode = events.simulate_scan(amap, scanner, cfg)
            sino = events.bin_to_sinogram(listmode, scanner)
            image, _ = mlem.mlem_reconstruct(A, sino.counts,
                                             mlem.MlemConfig(n_iterations=iterations))
            gt_path = out / f"slice{i:04d}_gt.pimg"
            lpet_path = out / f"slice{i:04d}_lpet.pimg"
            phantom.save_image(amap, gt_path)
            phantom.save_image(image, lpet_path)
            written += [gt_path, lpet_path]
            split = "test" if i >= len(slice_paths) - n_test else "train"
            sim_id = f"sim-{seed + i}"
            entries.append(phantom.ManifestEntry(
                input_lpet_path=lpet_path.name,
                ground_truth_path=gt_path.name,
                sim_config_id=sim_id,
                split=split))
            slice_provenance.append({"source": str(src), "sim_config": asdict(cfg),
                                     "sim_config_id": sim_id, "budget": budget})
        manifest = phantom.DatasetManifest(tuple(entries))
        phantom.save_manifest(manifest, out / "manifest.json")
        written.append(out / "manifest.json")
        _write_provenance(out, "provenance.json", {
            "command": "dataset",
            "n_total": n_total,
            "dose": dose,
            "seed": seed,
            "budgets": budgets,
            "scanner_hash": scanner.config.config_hash().hex(),
            "slices": slice_provenance,
        })
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    click.echo(f"dataset with {len(slice_paths)} slices, {n_total} events -> {out}")


@main.command("radon")
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--n-angles", default=180, type=int)
@click.option("--n-detectors", default=None, type=int)
@click.option("--spacing", default=None, type=float)
@pipeline_errors
def radon_cmd(image_path, out_path, n_angles, n_detectors, spacing):
    """Forward line-integral transform; sinogram saved as PIMG (rows=angles)."""
    amap = phantom.load_image(image_path)
    if n_detectors is None or spacing is None:
        spec = radon.default_radon_spec(amap.width, amap.height, amap.pixel_size, n_angles)
        spec = radon.RadonSpec(n_angles,
                               n_detectors if n_detectors is not None else spec.n_detectors,
                               spacing if spacing is not None else spec.detector_spacing)
    else:
        spec = radon.RadonSpec(n_angles, n_detectors, spacing)
    sino = radon.radon_forward(spec, amap.values, amap.pixel_size)
    phantom.save_image(phantom.ActivityMap(np.maximum(sino, 0.0), spec.detector_spacing),
                       out_path)
    click.echo(f"radon sinogram {spec.n_angles}x{spec.n_detectors} -> {out_path}")


@main.group()
def loss():
    """Reference loss kernels on PIMG/PSMP inputs (debugging aid)."""


@loss.command()
@click.option("--input-image", required=True, type=click.Path())
@click.option("--output-image", required=True, type=click.Path())
@click.option("--operator", type=click.Choice(["identity", "radon"]), default="radon")
@click.option("--n-angles", default=60, type=int)
@pipeline_errors
def consistency(input_image, output_image, operator, n_angles):
    a = phantom.load_image(input_image)
    b = phantom.load_image(output_image)
    if operator == "identity":
        op = lambda img: img  # noqa: E731
    else:
        spec = radon.default_radon_spec(a.width, a.height, a.pixel_size, n_angles)
        op = radon.get_operator(spec, a.width, a.height, a.pixel_size)
    click.echo(json.dumps({"consistency": consistency_loss(op, a.values, b.values)}))


@loss.command()
@click.option("--samples", "samples_path", required=True, type=click.Path())
@pipeline_errors
def diversity(samples_path):
    sample_set = uq.load_psmp(samples_path)
    click.echo(json.dumps({"diversity": diversity_loss(list(sample_set.samples))}))


@loss.command("first-moment")
@click.option("--ground-truth", required=True, type=click.Path())
@click.option("--samples", "samples_path", required=True, type=click.Path())
@pipeline_errors
def first_moment(ground_truth, samples_path):
    gt = phantom.load_image(ground_truth)
    sample_set = uq.load_psmp(samples_path)
    value = first_moment_loss(gt.values, list(sample_set.samples))
    click.echo(json.dumps({"first_moment": value}))


@loss.command()
@click.option("--adv", default=0.0, type=float)
@click.option("--grad-pen", default=0.0, type=float)
@click.option("--c", default=0.0, type=float)
@click.option("--d", default=0.0, type=float)
@click.option("--fm", default=0.0, type=float)
@click.option("--preset", type=click.Choice(["lpet", "vlpet"]), default="lpet")
@pipeline_errors
def combine(adv, grad_pen, c, d, fm, preset):
    from .losses import VLPET_WEIGHTS
    w = LossWeights() if preset == "lpet" else VLPET_WEIGHTS
    click.echo(json.dumps({"objective": combine_objective(adv, grad_pen, c, d, fm, w)}))


@main.command()
@click.option("--reference", required=True, type=click.Path())
@click.option("--estimate", required=True, type=click.Path())
@click.option("--rescale/--no-rescale", default=True,
              help="Min-max scale both images by the reference's range first.")
@pipeline_errors
def metrics(reference, estimate, rescale):
    """PSNR (dB) and SSIM of an estimate against a reference image."""
    ref = phantom.load_image(reference).values
    est = phantom.load_image(estimate).values
    if rescale:
        ref, est = uq.scale_to_reference(ref, est)
    doc = {"psnr_db": uq.psnr(ref, est, 1.0), "ssim": uq.ssim(ref, est, 1.0)}
    click.echo(json.dumps(doc))


@main.command("uq")
@click.option("--samples", "samples_path", required=True, type=click.Path())
@click.option("--ground-truth", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--display-max", default=uq.DEFAULT_UQ_DISPLAY_MAX, type=float)
@pipeline_errors
def uq_cmd(samples_path, ground_truth, out_dir, display_max):
    """Aggregate posterior samples into mean + variance map with metrics."""
    sample_set = uq.load_psmp(samples_path)
    if sample_set.k < 2:
        raise ValidationError("UQ aggregation needs at least 2 samples")
    gt = phantom.load_image(ground_truth)
    mean = uq.sample_mean(sample_set)
    variance = uq.sample_variance(sample_set)
    ref, est = uq.scale_to_reference(gt.values, mean)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    phantom.save_image(phantom.ActivityMap(np.maximum(mean, 0.0), gt.pixel_size),
                       out / "mean.pimg")
    phantom.save_image(phantom.ActivityMap(variance.values, gt.pixel_size),
                       out / "uq.pimg")
    (out / "mean.png").write_bytes(
        uq.render_png(mean, float(mean.min()), max(float(mean.max()), float(mean.min()) + 1e-12)))
    (out / "uq.png").write_bytes(uq.render_png(variance.values, 0.0, display_max, "hot"))
    doc = {"psnr_db": uq.psnr(ref, est, 1.0), "ssim": uq.ssim(ref, est, 1.0),
           "k": sample_set.k}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    click.echo(json.dumps(doc))


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--lo", default=0.0, type=float)
@click.option("--hi", default=1.0, type=float)
@click.option("--colormap", type=click.Choice(["gray", "hot"]), default="gray")
@pipeline_errors
def render(image_path, out_path, lo, hi, colormap):
    """Render a PIMG image to an 8-bit PNG with a linear display window."""
    amap = phantom.load_image(image_path)
    Path(out_path).write_bytes(uq.render_png(amap.values, lo, hi, colormap))
    click.echo(f"rendered {image_path} -> {out_path}")


if __name__ == "__main__":
    main()
