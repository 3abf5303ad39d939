"""Posterior-sample export bridging the trained generator to the UQ toolkit."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from tomopet.uq import PosteriorSampleSet, save_psmp

from .model import Generator, TrainerError


def draw_posterior_samples(generator: Generator, cond: torch.Tensor,
                           k: int = 24, seed: int = 0) -> np.ndarray:
    """Run ``k`` stochastic forward passes for one conditioning image.

    ``cond`` is (in_channels, H, W); returns a (k, H, W) float64 array.
    Deterministic for a fixed seed.
    """
    if k < 1:
        raise TrainerError("k must be >= 1")
    if cond.ndim != 3:
        raise TrainerError(f"conditioning image must be 3D, got {cond.ndim}D")
    gen_rng = torch.Generator().manual_seed(seed)
    generator.eval()
    batch = cond.unsqueeze(0)
    samples = []
    with torch.no_grad():
        for _ in range(k):
            z = generator.sample_noise(1, generator=gen_rng,
                                       device=batch.device, dtype=batch.dtype)
            out = generator(batch, z)
            samples.append(out[0, 0].to(torch.float64).cpu().numpy())
    return np.stack(samples)


def export_posterior_samples(generator: Generator, cond: torch.Tensor,
                             path, k: int = 24, seed: int = 0,
                             source_id: str = "") -> PosteriorSampleSet:
    """Draw ``k`` samples and persist them as a posterior-sample file."""
    arr = draw_posterior_samples(generator, cond, k=k, seed=seed)
    sample_set = PosteriorSampleSet(samples=arr, source_id=source_id)
    save_psmp(sample_set, Path(path))
    return sample_set
