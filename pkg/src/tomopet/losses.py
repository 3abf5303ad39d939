"""Framework-free reference loss kernels used to validate the trainer.

Expectations are replaced by explicit finite-sample estimators over the
sample lists passed in; batching is the caller's concern.  All kernels are
pure and bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class LossWeights:
    lambda_grad: float = 0.6
    gamma: float = 10.0
    lambda_c: float = 5e-4
    lambda_d: float = 2e-4
    tau: float = 1e-5
    lambda_fm: float = 2.0

    def __post_init__(self):
        for name in ("lambda_grad", "gamma", "lambda_c", "lambda_d", "lambda_fm"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if not self.tau > 0:
            raise ValidationError("tau must be positive")


VLPET_WEIGHTS = LossWeights(lambda_c=3e-4, lambda_d=1e-4)


def _check_same_grid(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")


def consistency_loss(operator, y_l: np.ndarray, g_out: np.ndarray) -> float:
    """Squared L2 distance between the transformed input and output images.

    ``operator`` is any callable mapping an image to an array (e.g. a
    RadonOperator or the identity).
    """
    y_l = np.asarray(y_l, dtype=np.float64)
    g_out = np.asarray(g_out, dtype=np.float64)
    _check_same_grid(y_l, g_out)
    diff = np.asarray(operator(y_l)) - np.asarray(operator(g_out))
    return float(np.sum(diff * diff))


def diversity_loss(samples) -> float:
    """Mean L1 distance over all unordered pairs of generated samples."""
    arrs = [np.asarray(s, dtype=np.float64) for s in samples]
    if len(arrs) < 2:
        raise ValidationError("diversity loss needs at least 2 samples")
    for s in arrs[1:]:
        _check_same_grid(arrs[0], s)
    total = 0.0
    count = 0
    for a, b in combinations(arrs, 2):
        total += float(np.sum(np.abs(a - b)))
        count += 1
    return total / count


def first_moment_loss(ground_truth: np.ndarray, samples) -> float:
    """Squared L2 distance between the ground truth and the sample mean."""
    gt = np.asarray(ground_truth, dtype=np.float64)
    arrs = [np.asarray(s, dtype=np.float64) for s in samples]
    if not arrs:
        raise ValidationError("first-moment loss needs at least 1 sample")
    for s in arrs:
        _check_same_grid(gt, s)
    mean = np.mean(arrs, axis=0)
    diff = gt - mean
    return float(np.sum(diff * diff))


def combine_objective(adv: float, grad_pen: float, c: float, d: float,
                      fm: float, w: LossWeights) -> float:
    """Generator-side scalar objective combining all components.

    The diversity term enters inverted, so larger sample diversity lowers
    the objective.
    """
    if d < 0:
        raise ValidationError("diversity component must be nonnegative")
    return (adv - w.lambda_grad * grad_pen + w.lambda_c * c
            + w.lambda_d / (d + w.tau) + w.lambda_fm * fm)
