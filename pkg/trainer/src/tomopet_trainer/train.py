"""Alternating adversarial training with posterior-sample diversity terms."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch.utils.data import DataLoader

from tomopet.losses import LossWeights, VLPET_WEIGHTS

from . import losses as L
from .data import PairDataset
from .model import Generator, GeneratorConfig, TrainerError, \
    build_discriminator, build_generator
from tomopet.radon import RadonSpec, default_radon_spec


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 2e-4
    batch_size: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weights: LossWeights = field(default_factory=LossWeights)
    m_div: int = 6
    n_div_inputs: int = 2
    k_posterior: int = 24
    ablation: bool = False
    grad_penalty_mode: str = "r1_gradient"
    n_radon_angles: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < self.n_div_inputs:
            raise TrainerError("batch_size must be >= n_div_inputs")
        if self.m_div < 2:
            raise TrainerError("m_div must be >= 2")
        if self.k_posterior < 1:
            raise TrainerError("k_posterior must be >= 1")
        if self.grad_penalty_mode not in ("r1_gradient", "literal_output_norm"):
            raise TrainerError(f"unknown grad_penalty_mode {self.grad_penalty_mode!r}")


# Dose-level presets mirroring the published training schedules.
PRESETS = {
    "lpet": TrainConfig(epochs=50, learning_rate=2e-4),
    "vlpet": TrainConfig(epochs=100, learning_rate=1e-4, weights=VLPET_WEIGHTS),
    "vlpet-adni": TrainConfig(epochs=150, learning_rate=1e-4, weights=VLPET_WEIGHTS),
}


class Trainer:
    def __init__(self, generator: Generator, discriminator, config: TrainConfig,
                 radon_spec: RadonSpec | None = None, pixel_size: float = 1.0):
        self.g = generator
        self.d = discriminator
        self.config = config
        h, w = generator.cfg.input_size
        if radon_spec is None:
            radon_spec = default_radon_spec(w, h, pixel_size, config.n_radon_angles)
        self.radon = L.TorchRadon(radon_spec, w, h, pixel_size, dtype=torch.float32)
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_g = torch.optim.Adam(self.g.parameters(), lr=config.learning_rate,
                                      betas=betas)
        self.opt_d = torch.optim.Adam(self.d.parameters(), lr=config.learning_rate,
                                      betas=betas)

    def _check_finite(self, value: torch.Tensor, what: str) -> None:
        if not torch.isfinite(value).all():
            raise TrainerError(f"non-finite {what} loss; aborting training")

    def discriminator_step(self, cond: torch.Tensor, truth: torch.Tensor) -> float:
        self.opt_d.zero_grad(set_to_none=True)
        with torch.no_grad():
            fake = self.g(cond)
        adv = L.adversarial_discriminator_loss(self.d(truth), self.d(fake))
        penalty = L.gradient_penalty(self.d, truth, self.config.weights.gamma,
                                     self.config.grad_penalty_mode)
        loss = adv + self.config.weights.lambda_grad * penalty
        self._check_finite(loss, "discriminator")
        loss.backward()
        self.opt_d.step()
        return float(loss.detach())

    def generator_step(self, cond: torch.Tensor,
                       truth: torch.Tensor) -> dict[str, float]:
        cfg = self.config
        w = cfg.weights
        self.opt_g.zero_grad(set_to_none=True)

        fake = self.g(cond)
        adv = L.adversarial_generator_loss(self.d(fake))
        c = L.consistency_loss(self.radon, cond[:, :1, :, :].squeeze(1),
                               fake.squeeze(1))

        # Diversity and first-moment terms use m_div fresh samples for the
        # first n_div_inputs conditioning images of the batch.
        head = cond[:cfg.n_div_inputs]
        samples = [self.g(head).squeeze(1) for _ in range(cfg.m_div)]
        d_val = L.diversity_loss(samples)
        fm = L.first_moment_loss(truth[:cfg.n_div_inputs].squeeze(1), samples)

        if cfg.ablation:
            # Diversity and first-moment terms removed (weights zeroed).
            loss = adv + w.lambda_c * c
        else:
            zero = adv.new_zeros(())
            loss = L.combine_objective(adv, zero, c, d_val, fm, w)
        self._check_finite(loss, "generator")
        loss.backward()
        self.opt_g.step()
        return {
            "total": float(loss.detach()),
            "adv": float(adv.detach()),
            "consistency": float(c.detach()),
            "diversity": float(d_val.detach()),
            "first_moment": float(fm.detach()),
        }

    def train(self, manifest_path, out_dir, log_name: str = "train_log.csv"):
        """Alternating training over the manifest's train split.

        Writes per-epoch CSV logs, a JSON provenance record, and one
        checkpoint per epoch (atomic rename); returns the final checkpoint
        path.
        """
        cfg = self.config
        torch.manual_seed(cfg.seed)
        dataset = PairDataset(manifest_path, "train")
        loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True,
                            generator=torch.Generator().manual_seed(cfg.seed),
                            drop_last=False)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        log_rows = []
        last_ckpt = None
        try:
            for epoch in range(cfg.epochs):
                sums: dict[str, float] = {}
                n_batches = 0
                for cond, truth in loader:
                    if cond.shape[0] < cfg.n_div_inputs:
                        continue
                    d_loss = self.discriminator_step(cond, truth)
                    parts = self.generator_step(cond, truth)
                    parts["d_loss"] = d_loss
                    for k, v in parts.items():
                        sums[k] = sums.get(k, 0.0) + v
                    n_batches += 1
                if n_batches == 0:
                    raise TrainerError("dataset yields no usable batches")
                row = {"epoch": epoch}
                row.update({k: v / n_batches for k, v in sums.items()})
                log_rows.append(row)
                last_ckpt = self._save_checkpoint(out / f"epoch{epoch:04d}.pt")
        finally:
            if log_rows:
                with open(out / log_name, "w", newline="", encoding="utf-8") as fh:
                    writer = csv.DictWriter(fh, fieldnames=list(log_rows[0]))
                    writer.writeheader()
                    writer.writerows(log_rows)
            doc = asdict(cfg)
            doc["weights"] = asdict(cfg.weights)
            doc["generator"] = asdict(self.g.cfg)
            doc["discriminator"] = type(self.d).__name__
            (out / "provenance.json").write_text(
                json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return last_ckpt

    def _save_checkpoint(self, path: Path) -> Path:
        tmp = path.with_suffix(".tmp")
        torch.save({
            "generator": self.g.state_dict(),
            "generator_config": asdict(self.g.cfg),
            "discriminator": self.d.state_dict(),
        }, tmp)
        os.replace(tmp, path)
        return path


def load_generator(checkpoint_path) -> Generator:
    state = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
    cfg = GeneratorConfig(**{**state["generator_config"],
                             "input_size": tuple(state["generator_config"]["input_size"])})
    gen = build_generator(cfg)
    gen.load_state_dict(state["generator"])
    gen.eval()
    return gen


def build_models(gen_cfg: GeneratorConfig, backbone: str = "small_resnet"):
    g = build_generator(gen_cfg)
    d = build_discriminator(gen_cfg.input_size,
                            in_channels=gen_cfg.out_channels, backbone=backbone)
    return g, d
