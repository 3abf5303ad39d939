"""MLEM reconstruction from binned coincidence counts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .phantom import ActivityMap
from .sysmat import SystemMatrix, back_project, forward_project, sensitivity


@dataclass(frozen=True)
class MlemConfig:
    n_iterations: int = 50
    epsilon: float = 1e-12
    initial_value: float = 1.0

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ValidationError("n_iterations must be >= 1")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if not self.initial_value > 0:
            raise ValidationError("initial_value must be positive")


def mlem_step(A: SystemMatrix, sens: np.ndarray, y: np.ndarray,
              x: np.ndarray, epsilon: float = 1e-12) -> np.ndarray:
    """One multiplicative update x_j <- (x_j / s_j) * sum_i a_ij y_i / ((Ax)_i + eps).

    Pixels with zero sensitivity are held at exactly 0.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.size != A.n_bins:
        raise ValidationError(f"data has {y.size} bins, matrix expects {A.n_bins}")
    if x.size != A.n_pixels:
        raise ValidationError(f"image has {x.size} pixels, matrix expects {A.n_pixels}")
    sens = np.asarray(sens, dtype=np.float64).reshape(A.ny, A.nx)
    x = x.reshape(A.ny, A.nx)
    support = sens > 0
    ratio = y / (forward_project(A, x) + epsilon)
    correction = back_project(A, ratio)
    out = np.zeros_like(x)
    np.divide(x * correction, sens, out=out, where=support)
    return out


def poisson_loglik(A: SystemMatrix, y: np.ndarray, x: np.ndarray,
                   epsilon: float = 1e-12) -> float:
    """Poisson log-likelihood sum_i [y_i log((Ax)_i + eps) - (Ax)_i]."""
    ax = forward_project(A, x)
    return float(np.sum(np.asarray(y) * np.log(ax + epsilon) - ax))


def mlem_reconstruct(A: SystemMatrix, y: np.ndarray,
                     config: MlemConfig = MlemConfig()) -> tuple[ActivityMap, list[float]]:
    """Run MLEM from a constant initial image on the sensitivity support.

    Returns the final image and the per-iteration log-likelihood trace.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0):
        raise ValidationError("counts must be nonnegative")
    sens = sensitivity(A)
    if not np.any(sens > 0):
        raise ValidationError("all-zero sensitivity; reconstruction impossible")
    x = np.where(sens > 0, config.initial_value, 0.0)
    trace = []
    for _ in range(config.n_iterations):
        x = mlem_step(A, sens, y, x, config.epsilon)
        trace.append(poisson_loglik(A, y, x, config.epsilon))
    return ActivityMap(x, A.pixel_size), trace
