"""Noise schedule and the exact per-step DDIM forward/inverse arithmetic.

The schedule stores the cumulative signal retention abar[0..T] with
abar[0] = 1 at the data end, so the t = 1 step sees (abar_1, abar_0 = 1)
and the boundary case is well defined. Both step maps are affine in
(latent, noise) with shared coefficients, hence exact inverses of each
other under a shared noise estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .latent import Latent, check_same_shape

DEFAULT_T = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray  # length T+1, alpha_bar[0] == 1, strictly decreasing

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if self.T < 1:
            raise ParameterError(f"T must be >= 1, got {self.T}")
        if ab.shape != (self.T + 1,):
            raise ParameterError(f"alpha_bar must have length T+1={self.T + 1}")
        if ab[0] != 1.0:
            raise ParameterError("alpha_bar[0] must be exactly 1")
        if not np.all(np.isfinite(ab)):
            raise ParameterError("alpha_bar contains non-finite entries")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ParameterError("alpha_bar entries must lie in (0, 1]")
        if np.any(np.diff(ab) >= 0.0):
            raise ParameterError("alpha_bar must be strictly decreasing")

    def check_t(self, t: int):
        if not 1 <= t <= self.T:
            raise IndexError(f"timestep {t} outside [1, {self.T}]")


def make_linear_schedule(T: int = DEFAULT_T,
                         beta_start: float = DEFAULT_BETA_START,
                         beta_end: float = DEFAULT_BETA_END) -> NoiseSchedule:
    """Cumulative products of (1 - beta) with beta linearly spaced."""
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end:
        raise ParameterError(
            f"need 0 < beta_start <= beta_end, got beta_start={beta_start}, beta_end={beta_end}"
        )
    if beta_end >= 1.0:
        raise ParameterError(f"beta_end must be < 1, got beta_end={beta_end}")
    betas = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
    return NoiseSchedule(T=T, alpha_bar=alpha_bar)


def coeffs(schedule: NoiseSchedule, t: int) -> tuple:
    """Per-step inversion coefficients (C1, C2) at timestep t.

    C1 = sqrt(abar_t / abar_{t-1});
    C2 = sqrt(abar_t) * (sqrt(1/abar_t - 1) - sqrt(1/abar_{t-1} - 1)).
    """
    schedule.check_t(t)
    a_t = schedule.alpha_bar[t]
    a_p = schedule.alpha_bar[t - 1]
    c1 = np.sqrt(a_t) / np.sqrt(a_p)
    c2 = np.sqrt(a_t) * (np.sqrt(1.0 / a_t - 1.0) - np.sqrt(1.0 / a_p - 1.0))
    return float(c1), float(c2)


def ddim_step(z_t: Latent, eps: Latent, schedule: NoiseSchedule, t: int) -> Latent:
    """One deterministic sampling step: z_t -> z_{t-1} given a noise estimate."""
    schedule.check_t(t)
    check_same_shape(z_t, eps, "latent and noise")
    a_t = schedule.alpha_bar[t]
    a_p = schedule.alpha_bar[t - 1]
    scale = np.sqrt(a_p) / np.sqrt(a_t)
    drift = np.sqrt(a_p) * (np.sqrt(1.0 / a_p - 1.0) - np.sqrt(1.0 / a_t - 1.0))
    return z_t.with_values(scale * z_t.values + drift * eps.values)


def ddim_invert_step_naive(z_prev: Latent, eps: Latent,
                           schedule: NoiseSchedule, t: int) -> Latent:
    """One inversion step: z_{t-1} -> z_t with a caller-supplied noise estimate."""
    schedule.check_t(t)
    check_same_shape(z_prev, eps, "latent and noise")
    c1, c2 = coeffs(schedule, t)
    return z_prev.with_values(c1 * z_prev.values + c2 * eps.values)
