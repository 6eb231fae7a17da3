"""Noise schedules, forward-process sampling, posterior statistics, and the
min-SNR-weighted noise-prediction loss.

Timesteps are 1-based: t in {1..T}, with table index t-1. All schedule
tables are float64 so downstream samplers agree with high-precision
re-derivations; values are cast to the payload dtype at the point of use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, DimensionError

# Reference pretraining schedule whose terminal noise level the desk-scale
# schedule reproduces.
REFERENCE_T = 1000
REFERENCE_BETA_START = 1e-4
REFERENCE_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule tables: beta_t, alpha_t = 1 - beta_t, and the
    cumulative product alpha_bar_t."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)
    beta_start: float = 0.0
    beta_end: float = 0.0

    def alpha_bar(self, t) -> np.ndarray:
        """alpha_bar_t for 1-based t (scalar or array)."""
        return self.alpha_bars[np.asarray(t) - 1]

    def alpha_bar_prev(self, t) -> np.ndarray:
        """alpha_bar_{t-1} with the alpha_bar_0 = 1 convention."""
        t = np.asarray(t)
        return np.where(t > 1, self.alpha_bars[np.maximum(t - 2, 0)], 1.0)

    def snr(self, t) -> np.ndarray:
        ab = self.alpha_bar(t)
        return ab / (1.0 - ab)


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 1:
        raise ConfigError(f"schedule needs T >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        T=T,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


def make_desk_schedule(T: int = 200) -> NoiseSchedule:
    """Short schedule whose terminal alpha_bar matches the reference
    1000-step schedule within 1%.

    Keeps the reference's end/start ratio and bisects a common multiplier.
    """
    ref = make_linear_schedule(REFERENCE_T, REFERENCE_BETA_START, REFERENCE_BETA_END)
    target = ref.alpha_bars[-1]
    ratio = REFERENCE_BETA_END / REFERENCE_BETA_START

    def terminal(start: float) -> float:
        return make_linear_schedule(T, start, start * ratio).alpha_bars[-1]

    lo, hi = 1e-7, 1.0 / ratio * 0.999  # keep beta_end < 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if terminal(mid) > target:
            lo = mid
        else:
            hi = mid
    start = 0.5 * (lo + hi)
    sched = make_linear_schedule(T, start, start * ratio)
    if abs(sched.alpha_bars[-1] / target - 1.0) > 0.01:
        raise ConfigError(f"desk schedule solve failed for T={T}")
    return sched


def _check_t(t, T: int) -> np.ndarray:
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > T):
        raise ContractError(f"timestep out of range 1..{T}: {t}")
    return t


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Forward-process jump: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.

    Deterministic; the caller supplies the noise draw. t may be a scalar or
    one value per sample.
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise DimensionError(f"q_sample: x0 {x0.shape} vs eps {eps.shape}")
    t = _check_t(t, sched.T)
    ab = sched.alpha_bar(t).astype(x0.dtype)
    if ab.ndim > 0:
        if ab.shape[0] != x0.shape[0]:
            raise DimensionError("q_sample: per-sample t length must match batch")
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


@dataclass(frozen=True)
class PosteriorStats:
    """Coefficients of q(x_{t-1} | x_t, x_0) per step (1-based index t-1):
    mean = coef_x0 * x0 + coef_xt * x_t, variance = beta_tilde.

    beta_tilde at t=1 is defined as 0 (deterministic final denoise step).
    """

    coef_x0: np.ndarray
    coef_xt: np.ndarray
    variance: np.ndarray

    @classmethod
    def from_schedule(cls, sched: NoiseSchedule) -> "PosteriorStats":
        ab = sched.alpha_bars
        ab_prev = np.concatenate([[1.0], ab[:-1]])
        betas = sched.betas
        one_minus_ab = 1.0 - ab
        coef_x0 = np.sqrt(ab_prev) * betas / one_minus_ab
        coef_xt = np.sqrt(sched.alphas) * (1.0 - ab_prev) / one_minus_ab
        variance = betas * (1.0 - ab_prev) / one_minus_ab
        variance[0] = 0.0
        return cls(coef_x0=coef_x0, coef_xt=coef_xt, variance=variance)


def posterior(x0: np.ndarray, xt: np.ndarray, t: int, sched: NoiseSchedule):
    """Mean and variance of q(x_{t-1} | x_t, x_0) at a single step t >= 1."""
    if t < 1 or t > sched.T:
        raise ContractError(f"posterior undefined at t={t}")
    stats = PosteriorStats.from_schedule(sched)
    i = t - 1
    mean = stats.coef_x0[i] * np.asarray(x0) + stats.coef_xt[i] * np.asarray(xt)
    return mean, float(stats.variance[i])


@dataclass(frozen=True)
class LossConfig:
    """Noise-prediction objective settings; snr_clip is the min-SNR cap
    (math.inf disables weighting)."""

    snr_clip: float = 5.0

    def __post_init__(self):
        if not self.snr_clip > 0:
            raise ConfigError(f"snr_clip must be positive, got {self.snr_clip}")


def snr_weights(t, cfg: LossConfig, sched: NoiseSchedule) -> np.ndarray:
    """Per-sample loss weight min(SNR_t, clip) / SNR_t."""
    snr = sched.snr(np.asarray(t))
    if math.isinf(cfg.snr_clip):
        return np.ones_like(snr)
    return np.minimum(snr, cfg.snr_clip) / snr


def diffusion_loss(
    eps_true: np.ndarray,
    eps_pred: ad.Tensor,
    t,
    cfg: LossConfig,
    sched: NoiseSchedule,
) -> ad.Tensor:
    """Min-SNR-weighted MSE between true and predicted noise.

    Per-sample squared errors are averaged over all non-batch axes, scaled
    by min(SNR_t, clip)/SNR_t, and averaged over the batch.
    """
    eps_true = np.asarray(eps_true)
    if eps_true.shape != eps_pred.shape:
        raise DimensionError(f"loss: {eps_true.shape} vs {eps_pred.shape}")
    n = eps_true.shape[0]
    t = _check_t(np.broadcast_to(np.asarray(t), (n,)), sched.T)
    w = snr_weights(t, cfg, sched).astype(eps_pred.dtype)
    diff = ad.sub(eps_pred, ad.Tensor(eps_true.astype(eps_pred.dtype, copy=False)))
    per_sample = ad.mean_per_sample(ad.square(diff))
    return ad.dot_const(per_sample, w / n)
