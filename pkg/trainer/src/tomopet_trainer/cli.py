"""Command-line entry points for training and posterior-sample export."""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import numpy as np
import torch

from tomopet.phantom import load_image

from .data import PairDataset
from .export import export_posterior_samples
from .model import GeneratorConfig, TrainerError, build_discriminator, \
    build_generator
from .train import PRESETS, Trainer, load_generator


@click.group()
def main():
    """Adversarial low-dose PET denoiser: training and sample export."""


@main.command()
@click.option("--manifest", type=click.Path(exists=True), required=True,
              help="Dataset manifest with a train split of image pairs.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default="lpet",
              show_default=True)
@click.option("--epochs", type=int, default=None,
              help="Override the preset's epoch count.")
@click.option("--n-rrdb", type=int, default=4, show_default=True,
              help="Residual-in-residual dense blocks in the generator.")
@click.option("--unshuffle-factor", type=click.Choice(["2", "4"]), default="2",
              show_default=True)
@click.option("--ablation/--no-ablation", default=False, show_default=True,
              help="Drop the diversity and first-moment terms.")
@click.option("--seed", type=int, default=0, show_default=True)
def train(manifest, out_dir, preset, epochs, n_rrdb, unshuffle_factor,
          ablation, seed):
    """Train the generator/discriminator pair on a paired dataset."""
    try:
        dataset = PairDataset(manifest, "train")
        cfg = PRESETS[preset]
        cfg = dataclasses.replace(
            cfg, ablation=ablation, seed=seed,
            **({"epochs": epochs} if epochs is not None else {}))
        h, w = dataset.image_size
        gen_cfg = GeneratorConfig(input_size=(h, w), in_channels=2,
                                  unshuffle_factor=int(unshuffle_factor),
                                  n_rrdb=n_rrdb)
        generator = build_generator(gen_cfg)
        discriminator = build_discriminator(gen_cfg.input_size)
        trainer = Trainer(generator, discriminator, cfg)
        ckpt = trainer.train(manifest, out_dir)
    except (TrainerError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"final checkpoint: {ckpt}")


@main.command()
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--input", "input_path", type=click.Path(exists=True),
              required=True, help="Low-dose reconstruction (PIMG).")
@click.option("--aux", type=click.Path(exists=True), default=None,
              help="Optional second conditioning channel (PIMG).")
@click.option("--output", type=click.Path(), required=True,
              help="Posterior sample file (PSMP) to write.")
@click.option("--k", type=int, default=24, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def sample(checkpoint, input_path, aux, output, k, seed):
    """Draw posterior samples from a trained generator."""
    try:
        generator = load_generator(checkpoint)
        lpet = load_image(input_path).values
        second = load_image(aux).values if aux else lpet
        scale = float(lpet.max()) or 1.0
        cond = torch.from_numpy(
            np.stack([lpet, second]).astype(np.float32) / scale)
        export_posterior_samples(generator, cond, output, k=k, seed=seed,
                                 source_id=str(Path(input_path).name))
    except (TrainerError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {k} samples to {output}")


if __name__ == "__main__":
    main()
