"""Noise schedules, forward diffusion, DDIM sampling, classifier-free
guidance, previous-frame noise modulation, and closed-form Gaussian
denoisers usable as test oracles.

Latents are plain float ndarrays of shape (C, h, w). A denoiser is any
callable (z_t, t, condition) -> predicted noise of the same shape, and must
be deterministic given its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

Denoiser = Callable[[np.ndarray, int, object], np.ndarray]

DEFAULT_T = 1000
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2
DEFAULT_N_MAX = 300
DEFAULT_BLUR_STD = 1.0
DEFAULT_GUIDANCE_SCALE = 2.0
DEFAULT_REF_DROPOUT = 0.2
LATENT_DOWNSAMPLE = 8


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Beta schedule with cumulative signal coefficients.

    alpha_bar has T + 1 entries; index 0 is the clean convention alpha_bar=1
    and index t matches diffusion step t.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if self.alpha_bar.shape != (self.T + 1,):
            raise ValueError("alpha_bar must have T + 1 entries")


def build_schedule(
    T: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
    kind: str = "scaled_linear",
) -> NoiseSchedule:
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind == "linear":
        beta = np.linspace(beta_start, beta_end, T)
    elif kind == "scaled_linear":
        beta = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), T) ** 2
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_diffuse(
    z0: np.ndarray, n: int, eps: np.ndarray, sched: NoiseSchedule
) -> np.ndarray:
    """sqrt(abar_n) * z0 + sqrt(1 - abar_n) * eps."""
    if z0.shape != eps.shape:
        raise ValueError("z0 and eps shapes differ")
    if not (0 <= n <= sched.T):
        raise ValueError(f"step {n} outside [0, {sched.T}]")
    ab = sched.alpha_bar[n]
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def _reflect_indices(n: int, radius: int) -> np.ndarray:
    """Mirror (edge-pixel excluded) index map for [-radius, n + radius)."""
    idx = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def gaussian_blur(img: np.ndarray, std: float) -> np.ndarray:
    """Separable Gaussian blur with a truncated normalized kernel.

    Kernel radius is ceil(3 * std) with reflect padding; std = 0 is the
    identity. Works on (..., h, w) fields, channel by channel.
    """
    if std < 0:
        raise ValueError("std must be >= 0")
    if std == 0.0:
        return img.copy()
    radius = math.ceil(3.0 * std)
    ks = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-(ks**2) / (2.0 * std * std))
    kernel /= kernel.sum()

    out = np.asarray(img, dtype=float)
    for axis in (-2, -1):
        n = out.shape[axis]
        padded = np.take(out, _reflect_indices(n, radius), axis=axis)
        acc = np.zeros_like(out)
        for k, wgt in enumerate(kernel):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(k, k + n)
            acc += wgt * padded[tuple(sl)]
        out = acc
    return out


def modulate_previous(
    z_prev: np.ndarray,
    sched: NoiseSchedule,
    n_max: int,
    rng: np.random.Generator,
    blur_std: float = DEFAULT_BLUR_STD,
) -> tuple[np.ndarray, int]:
    """Corrupt a previous-frame latent with blur plus a random noise level.

    Draws n uniformly from {0, ..., n_max}, blurs, then forward-diffuses to
    level n with fresh noise. Returns (corrupted latent, n); downstream
    conditioning consumes n alongside the corrupted field.
    """
    if not (0 <= n_max <= sched.T):
        raise ValueError("n_max outside schedule range")
    n = int(rng.integers(0, n_max + 1))
    blurred = gaussian_blur(z_prev, blur_std)
    if n == 0:
        return blurred, 0
    eps = rng.standard_normal(z_prev.shape)
    return forward_diffuse(blurred, n, eps, sched), n


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, s: float) -> np.ndarray:
    """Classifier-free guidance: eps_u + s * (eps_c - eps_u).

    The endpoint scales return their branch exactly (no float drift).
    """
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError("branch shapes differ")
    if s == 1.0:
        return eps_cond.copy()
    if s == 0.0:
        return eps_uncond.copy()
    return eps_uncond + s * (eps_cond - eps_uncond)


def ddim_step(
    z_t: np.ndarray, eps_hat: np.ndarray, t: int, t_prev: int, sched: NoiseSchedule
) -> np.ndarray:
    """One deterministic DDIM update from step t to t_prev < t."""
    if not (0 <= t_prev < t <= sched.T):
        raise ValueError(f"need 0 <= t_prev < t <= T, got {t_prev}, {t}")
    ab_t = sched.alpha_bar[t]
    ab_p = sched.alpha_bar[t_prev]
    z0_hat = (z_t - math.sqrt(1.0 - ab_t) * eps_hat) / math.sqrt(ab_t)
    return math.sqrt(ab_p) * z0_hat + math.sqrt(1.0 - ab_p) * eps_hat


def sample_timesteps(T: int, steps: int) -> list[int]:
    """Uniformly strided descending timesteps from T to 0 inclusive."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    ts = np.unique(np.linspace(0, T, steps + 1).round().astype(int))[::-1]
    return [int(t) for t in ts]


@dataclass(frozen=True)
class Guidance:
    """One CFG branch: re-run the denoiser on alternate conditions."""

    alt_condition: object
    scale: float


def sample(
    denoiser: Denoiser,
    condition: object,
    steps: int,
    sched: NoiseSchedule,
    rng: np.random.Generator,
    shape: tuple[int, ...],
    guidance: Sequence[Guidance] = (),
) -> np.ndarray:
    """Run DDIM from standard normal noise down to step 0.

    Each configured guidance evaluates the denoiser once on its alternate
    condition and combines the branches with cfg_combine.
    """
    ts = sample_timesteps(sched.T, steps)
    z = rng.standard_normal(shape)
    for t, t_prev in zip(ts[:-1], ts[1:]):
        eps_hat = denoiser(z, t, condition)
        for g in guidance:
            eps_alt = denoiser(z, t, g.alt_condition)
            eps_hat = cfg_combine(eps_alt, eps_hat, g.scale)
        z = ddim_step(z, eps_hat, t, t_prev, sched)
    return z


def analytic_gaussian_denoiser(mu: np.ndarray, sigma: float, sched: NoiseSchedule) -> Denoiser:
    """Posterior-mean noise predictor for data ~ Normal(mu, sigma^2 I).

    eps*(z, t) = sqrt(1 - abar_t) * (z - sqrt(abar_t) * mu)
                 / (abar_t * sigma^2 + 1 - abar_t).
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    mu = np.asarray(mu, dtype=float)

    def denoiser(z_t: np.ndarray, t: int, condition: object) -> np.ndarray:
        ab = sched.alpha_bar[t]
        denom = ab * sigma * sigma + 1.0 - ab
        if denom == 0.0:
            return np.zeros_like(z_t)
        return math.sqrt(1.0 - ab) * (z_t - math.sqrt(ab) * mu) / denom

    return denoiser


def ldm_loss_estimate(
    denoiser: Denoiser,
    data_sampler: Callable[[np.random.Generator], np.ndarray],
    sched: NoiseSchedule,
    num_samples: int,
    rng: np.random.Generator,
    condition: object = None,
) -> float:
    """Monte Carlo estimate of E || eps - denoiser(z_t; t, c) ||^2.

    t is uniform on {1, ..., T} and eps standard normal, matching the
    denoising training objective.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    acc = 0.0
    for _ in range(num_samples):
        z0 = data_sampler(rng)
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(z0.shape)
        z_t = forward_diffuse(z0, t, eps, sched)
        diff = eps - denoiser(z_t, t, condition)
        acc += float(np.sum(diff * diff))
    return acc / num_samples


def to_latent(image: np.ndarray, factor: int = LATENT_DOWNSAMPLE) -> np.ndarray:
    """Desk-scale stand-in for the VAE encoder: x8 area-average downsample.

    image is (C, H, W) with H, W divisible by factor.
    """
    C, H, W = image.shape
    if H % factor or W % factor:
        raise ValueError(f"image size {H}x{W} not divisible by {factor}")
    return image.reshape(C, H // factor, factor, W // factor, factor).mean(axis=(2, 4))


def from_latent(latent: np.ndarray, factor: int = LATENT_DOWNSAMPLE) -> np.ndarray:
    """Inverse stand-in for the VAE decoder: x8 nearest upsample."""
    return latent.repeat(factor, axis=-2).repeat(factor, axis=-1)


def save_latent(latent: np.ndarray, path: str) -> None:
    """Raw little-endian float32 dump with a small shape header."""
    arr = np.ascontiguousarray(latent, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(b"B2DRLAT1")
        fh.write(np.asarray([arr.ndim], dtype="<u4").tobytes())
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.tobytes())


def load_latent(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != b"B2DRLAT1":
            raise ValueError(f"{path}: not a latent dump")
        ndim = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        shape = tuple(np.frombuffer(fh.read(4 * ndim), dtype="<u4"))
        data = np.frombuffer(fh.read(), dtype="<f4")
    return data.reshape(shape).astype(float)
