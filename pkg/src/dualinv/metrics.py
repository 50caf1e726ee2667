"""Inversion-quality metrics: latent-noise gap, reconstruction gap, and
standard fidelity scores at toy scale.

The structural-similarity score uses a uniform window (default 7) so
every number is auditable by hand; the peak-signal ratio returns a
documented cap of 99 dB for identical inputs instead of infinity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .latent import Latent, check_same_shape

PSNR_CAP_DB = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class GapSummary:
    d_noi: float
    d_rec: float
    psnr: float
    ssim: float = None  # image-shaped latents only


def noise_gap(z_T: Latent, z_T_star: Latent) -> float:
    """Euclidean distance between recovered and ideal terminal latents."""
    check_same_shape(z_T, z_T_star, "terminal latents")
    return float(np.linalg.norm(z_T.flat - z_T_star.flat))


def recon_error(z_0: Latent, z_hat: Latent) -> float:
    """Mean squared error between source latent and its reconstruction."""
    check_same_shape(z_0, z_hat, "source and reconstruction")
    diff = z_0.flat - z_hat.flat
    return float(np.mean(diff * diff))


def psnr(z_0: Latent, z_hat: Latent, peak: float = 1.0) -> float:
    if peak <= 0.0:
        raise ParameterError(f"peak must be > 0, got {peak}")
    mse = recon_error(z_0, z_hat)
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / mse))


def ssim(img_a: Latent, img_b: Latent, window: int = 7,
         dynamic_range: float = 1.0) -> float:
    """Mean local structural similarity with a uniform window."""
    check_same_shape(img_a, img_b, "images")
    a = img_a.values
    b = img_b.values
    if a.ndim != 2:
        raise ShapeError("ssim requires image-shaped (2-D) latents")
    h, w = a.shape
    if h < window or w < window:
        raise ShapeError(f"image dims {a.shape} smaller than window {window}")
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2
    scores = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            pa = a[i: i + window, j: j + window]
            pb = b[i: i + window, j: j + window]
            mu_a, mu_b = pa.mean(), pb.mean()
            var_a = pa.var()
            var_b = pb.var()
            cov = ((pa - mu_a) * (pb - mu_b)).mean()
            num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
            den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
            scores.append(num / den)
    return float(np.mean(scores))


def gap_summary(z_T: Latent, z_T_star: Latent, z_0: Latent, z_hat: Latent,
                peak: float = 1.0) -> GapSummary:
    s = None
    if z_0.values.ndim == 2:
        s = ssim(z_0, z_hat, dynamic_range=peak)
    return GapSummary(d_noi=noise_gap(z_T, z_T_star),
                      d_rec=recon_error(z_0, z_hat),
                      psnr=psnr(z_0, z_hat, peak), ssim=s)
