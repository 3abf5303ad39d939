"""Torch-side training losses mirroring the framework-free reference kernels.

The component values computed here must match ``tomopet.losses`` on the same
inputs; the test suite enforces 1e-5 relative parity on frozen batches.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
import torch
import torch.nn.functional as F

from tomopet.losses import LossWeights
from tomopet.radon import RadonSpec, get_operator

from .model import TrainerError


class TorchRadon:
    """Sparse torch wrapper around the shared line-integral operator."""

    def __init__(self, spec: RadonSpec, nx: int, ny: int, pixel_size: float,
                 dtype=torch.float64):
        op = get_operator(spec, nx, ny, pixel_size)
        coo = op.matrix.tocoo()
        idx = torch.tensor(np.stack([coo.row, coo.col]), dtype=torch.int64)
        val = torch.tensor(coo.data, dtype=dtype)
        self.matrix = torch.sparse_coo_tensor(
            idx, val, size=coo.shape, check_invariants=True).coalesce()
        self.spec = spec
        self.nx, self.ny = nx, ny

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        flat = image.reshape(-1, self.nx * self.ny).to(self.matrix.dtype)
        out = torch.sparse.mm(self.matrix, flat.t()).t()
        return out.reshape(*image.shape[:-2], self.spec.n_angles,
                           self.spec.n_detectors)


def consistency_loss(operator, y_l: torch.Tensor, g_out: torch.Tensor) -> torch.Tensor:
    """Squared L2 distance between operator images of input and output."""
    if y_l.shape != g_out.shape:
        raise TrainerError(f"image shapes differ: {tuple(y_l.shape)} vs {tuple(g_out.shape)}")
    diff = operator(y_l) - operator(g_out)
    return (diff * diff).sum()


def diversity_loss(samples: list[torch.Tensor]) -> torch.Tensor:
    """Mean pairwise L1 distance over the generated samples."""
    if len(samples) < 2:
        raise TrainerError("diversity loss needs at least 2 samples")
    total = samples[0].new_zeros(())
    count = 0
    for a, b in combinations(samples, 2):
        total = total + (a - b).abs().sum()
        count += 1
    return total / count


def first_moment_loss(ground_truth: torch.Tensor,
                      samples: list[torch.Tensor]) -> torch.Tensor:
    """Squared L2 distance between the truth and the sample mean."""
    if not samples:
        raise TrainerError("first-moment loss needs at least 1 sample")
    mean = torch.stack(samples).mean(dim=0)
    diff = ground_truth - mean
    return (diff * diff).sum()


def adversarial_generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss -E[log sigmoid(D(fake))]."""
    return F.softplus(-fake_logits).mean()


def adversarial_discriminator_loss(real_logits: torch.Tensor,
                                   fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def gradient_penalty(discriminator, real: torch.Tensor, gamma: float,
                     mode: str = "r1_gradient") -> torch.Tensor:
    """Discriminator regularizer on real data.

    ``r1_gradient`` (default): (gamma/2) E ||grad_x D(x)||^2.
    ``literal_output_norm``: (gamma/2) E [D(x)^2] (no differentiation).
    """
    if mode == "literal_output_norm":
        logits = discriminator(real)
        return 0.5 * gamma * (logits * logits).mean()
    if mode != "r1_gradient":
        raise TrainerError(f"unknown gradient penalty mode {mode!r}")
    real = real.detach().requires_grad_(True)
    logits = discriminator(real)
    (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=True)
    return 0.5 * gamma * grad.pow(2).flatten(1).sum(dim=1).mean()


def combine_objective(adv: torch.Tensor, grad_pen: torch.Tensor,
                      c: torch.Tensor, d: torch.Tensor, fm: torch.Tensor,
                      w: LossWeights) -> torch.Tensor:
    """Generator objective; same composition as the reference kernel."""
    # Divide tensor-by-tensor: torch rewrites python-scalar / tensor as a
    # reciprocal multiply, which is one ulp off true IEEE division.
    lam_d = torch.as_tensor(w.lambda_d, dtype=d.dtype, device=d.device)
    return adv - w.lambda_grad * grad_pen + w.lambda_c * c \
        + lam_d / (d + w.tau) + w.lambda_fm * fm
