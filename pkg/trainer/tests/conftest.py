import numpy as np
import pytest
import torch

from tomopet.phantom import (ActivityMap, DatasetManifest, ManifestEntry,
                             save_image, save_manifest)

from tomopet_trainer import GeneratorConfig, build_generator


DESK_CONFIG = GeneratorConfig(input_size=(32, 32), in_channels=2,
                              unshuffle_factor=2, base_channels=16, n_rrdb=2)


@pytest.fixture(scope="session")
def desk_generator():
    torch.manual_seed(7)
    return build_generator(DESK_CONFIG)


def _blob(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth nonnegative test image: a random mixture of Gaussian bumps."""
    yy, xx = np.mgrid[0:size, 0:size]
    img = np.zeros((size, size))
    for _ in range(3):
        cx, cy = rng.uniform(size * 0.25, size * 0.75, 2)
        sigma = rng.uniform(2.0, 5.0)
        img += rng.uniform(0.5, 2.0) * np.exp(
            -((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
    return img


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory):
    """Six paired 32x32 images (4 train / 2 test) plus a manifest file."""
    root = tmp_path_factory.mktemp("toy_dataset")
    rng = np.random.default_rng(99)
    entries = []
    for i in range(6):
        gt = _blob(rng, 32)
        noisy = np.clip(gt + rng.normal(0, 0.15, gt.shape), 0, None)
        gt_path = f"pair{i}_gt.pimg"
        lpet_path = f"pair{i}_lpet.pimg"
        save_image(ActivityMap(gt, 1.0), root / gt_path)
        save_image(ActivityMap(noisy, 1.0), root / lpet_path)
        entries.append(ManifestEntry(
            input_lpet_path=lpet_path, ground_truth_path=gt_path,
            sim_config_id=f"toy{i}", split="train" if i < 4 else "test"))
    manifest_path = root / "manifest.json"
    save_manifest(DatasetManifest(tuple(entries)), manifest_path)
    return manifest_path
