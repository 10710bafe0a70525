"""Noise schedules and the forward (noising) process.

The discrete schedule follows the variance-preserving convention: per-step
noise rates ``beta_1 .. beta_T`` in (0, 1), cumulative products

    alpha_bar_t = prod_{s=1..t} (1 - beta_s),        alpha_bar_0 = 1,

and squared diffusion coefficient ``g^2(t) = beta_t``. Structured
initialization draws the diffusion state directly at an intermediate step:

    z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps,
    eps ~ N(0, I), i.i.d. per element and independent across frames.

Solvers need schedule quantities at non-integer times, so every schedule
also carries a documented continuous extension, exact at integer steps:

- ``beta(t)``: the analytic interpolation law of the schedule kind (the
  discrete betas are samples of it), clamped to ``beta(1)`` below t = 1;
- ``alpha_bar(t)``: exp of a shape-preserving monotone cubic (PCHIP)
  interpolant of ``log alpha_bar`` over the integer knots.

Randomness comes from the Philox counter-based generator keyed through
``numpy.random.SeedSequence(seed, spawn_key=...)``, which makes every draw a
pure, platform-independent function of (seed, stream, element index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .codec import LatentVideo
from .errors import ConfigError, DataError

SCHEDULE_KINDS = ("linear", "scaled_linear")

_U64 = (1 << 64) - 1


def stream_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for an integer-labelled substream of ``seed``."""
    ss = np.random.SeedSequence(entropy=seed & _U64, spawn_key=tuple(stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class NoiseSchedule:
    """Discrete VP noise schedule with a continuous-time extension.

    Fields:
        num_steps: total step count T >= 1.
        betas: per-step rates, ``betas[i]`` is beta_{i+1}, each in (0, 1).
        alpha_bars: length T+1 running products, ``alpha_bars[0] == 1``.
        diffusion_coeff_sq: ``g^2`` per step; equals ``betas``.
        kind, beta_start, beta_end: the generating parameters.
    """

    num_steps: int
    betas: np.ndarray
    alpha_bars: np.ndarray
    diffusion_coeff_sq: np.ndarray
    kind: str = "linear"
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    _log_ab_interp: PchipInterpolator | None = field(
        default=None, repr=False, compare=False
    )

    @property
    def T(self) -> int:
        return self.num_steps

    def beta(self, t: float) -> float:
        """Noise rate at real ``t``; matches ``betas[t-1]`` exactly at integers."""
        return float(beta_law(self.kind, self.num_steps,
                              self.beta_start, self.beta_end,
                              np.asarray(t, dtype=np.float64)))

    def _interp(self) -> PchipInterpolator:
        if self._log_ab_interp is None:
            knots = np.arange(self.num_steps + 1, dtype=np.float64)
            self._log_ab_interp = PchipInterpolator(knots, np.log(self.alpha_bars))
        return self._log_ab_interp

    def alpha_bar(self, t: float) -> float:
        """Cumulative product at real ``t`` in [0, T]; exact at integer t."""
        if t < 0 or t > self.num_steps:
            raise ConfigError(f"t={t} outside schedule range [0, {self.num_steps}]")
        if float(t).is_integer():
            return float(self.alpha_bars[int(t)])
        return float(np.exp(self._interp()(t)))

    def alpha_bar_dense(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized continuous cumulative product over an array of times."""
        ts = np.asarray(ts, dtype=np.float64)
        if np.any(ts < 0) or np.any(ts > self.num_steps):
            raise ConfigError("times outside schedule range")
        out = np.exp(self._interp()(ts))
        integral = ts == np.floor(ts)
        out[integral] = self.alpha_bars[ts[integral].astype(int)]
        return out

    def log_snr(self, t: float) -> float:
        """Half log signal-to-noise ratio ``0.5 * ln(ab / (1 - ab))``.

        Returns ``+inf`` at t = 0 where the noise variance vanishes.
        """
        ab = self.alpha_bar(t)
        if ab >= 1.0:
            return math.inf
        return 0.5 * (math.log(ab) - math.log1p(-ab))

    def time_at_log_snr(self, target: float, t_lo: float, t_hi: float) -> float:
        """Invert :meth:`log_snr` on ``(t_lo, t_hi)``; log-SNR is decreasing in t."""
        f_lo = self.log_snr(t_lo) - target
        f_hi = self.log_snr(t_hi) - target
        if math.isfinite(f_lo) and abs(f_lo) < 1e-12:
            return float(t_lo)
        if math.isfinite(f_hi) and abs(f_hi) < 1e-12:
            return float(t_hi)
        if not (math.isfinite(f_lo) and math.isfinite(f_hi)) or f_lo * f_hi > 0:
            raise ConfigError(
                f"log-SNR target {target} not bracketed by [{t_lo}, {t_hi}]"
            )
        return float(brentq(lambda tau: self.log_snr(tau) - target, t_lo, t_hi,
                            xtol=1e-10))


def beta_law(kind: str, T: int, beta_start: float, beta_end: float,
             t: np.ndarray) -> np.ndarray:
    """Continuous interpolation law evaluated at (possibly fractional) steps.

    Clamped to the t = 1 value below the first step so the rate stays
    positive near t = 0.
    """
    t = np.clip(t, 1.0, float(T))
    if T == 1:
        frac = np.zeros_like(t)
    else:
        frac = (t - 1.0) / (T - 1.0)
    if kind == "linear":
        return beta_start + (beta_end - beta_start) * frac
    if kind == "scaled_linear":
        root = math.sqrt(beta_start) + (math.sqrt(beta_end) - math.sqrt(beta_start)) * frac
        return root ** 2
    raise ConfigError(f"unknown schedule kind {kind!r}")


def make_schedule(T: int, beta_start: float, beta_end: float,
                  kind: str = "linear") -> NoiseSchedule:
    """Build a schedule; the running product is computed once, exactly.

    Raises ConfigError on an invalid range, T < 1, an unknown kind, or if
    the cumulative product collapses in float64 (ties or underflow), which
    would break the strict-monotonicity invariant.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ConfigError(f"T must be an integer >= 1, got {T!r}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"kind must be one of {SCHEDULE_KINDS}, got {kind!r}")

    steps = np.arange(1, T + 1, dtype=np.float64)
    betas = beta_law(kind, T, beta_start, beta_end, steps)
    alpha_bars = np.empty(T + 1, dtype=np.float64)
    alpha_bars[0] = 1.0
    alpha_bars[1:] = np.cumprod(1.0 - betas)

    if alpha_bars[-1] <= 0.0 or np.any(np.diff(alpha_bars) >= 0.0):
        raise ConfigError(
            "cumulative product is not strictly decreasing in float64; "
            f"the range [{beta_start}, {beta_end}] is too aggressive for T={T}"
        )
    return NoiseSchedule(
        num_steps=int(T),
        betas=betas,
        alpha_bars=alpha_bars,
        diffusion_coeff_sq=betas.copy(),
        kind=kind,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
    )


@dataclass
class InversionConfig:
    """How far up the schedule the sketch is pushed before denoising.

    ``alpha_ratio`` is clamped into ``backend_range`` before use; noise is
    always drawn independently per frame (recorded for provenance).
    """

    alpha_ratio: float
    backend_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    per_frame_independent_noise: bool = True

    def __post_init__(self):
        lo, hi = self.backend_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ConfigError(f"invalid backend range [{lo}, {hi}]")
        if not (0.0 < self.alpha_ratio < 1.0) and self.alpha_ratio not in (0.0, 1.0):
            raise ConfigError(f"alpha ratio must lie in [0, 1], got {self.alpha_ratio}")

    @property
    def clamped_alpha(self) -> float:
        lo, hi = self.backend_range
        return min(max(self.alpha_ratio, lo), hi)


def inversion_timestep(cfg: InversionConfig, schedule: NoiseSchedule) -> int:
    """Intermediate start step: round-half-up of clamped ratio times T.

    Always lands in [1, T]; out-of-range ratios are absorbed by clamping.
    """
    t = math.floor(cfg.clamped_alpha * schedule.num_steps + 0.5)
    return int(min(max(t, 1), schedule.num_steps))


def forward_noise(z0: LatentVideo, t_inv: int, schedule: NoiseSchedule,
                  seed: int) -> LatentVideo:
    """Push a clean latent to step ``t_inv`` of the forward process.

    Deterministic given ``seed``; frame ``f`` consumes the Philox substream
    ``(seed, 0, f)``, so frames can be noised independently or in parallel
    with identical results.
    """
    if not 1 <= t_inv <= schedule.num_steps:
        raise ConfigError(
            f"t_inv={t_inv} outside [1, {schedule.num_steps}]"
        )
    if not np.all(np.isfinite(z0.data)):
        raise DataError("forward_noise input contains non-finite values")

    ab = schedule.alpha_bars[t_inv]
    signal, noise_scale = math.sqrt(ab), math.sqrt(1.0 - ab)
    out = np.empty_like(z0.data)
    for f in range(z0.frame_count):
        eps = stream_rng(seed, 0, f).standard_normal(z0.data.shape[1:])
        out[f] = signal * z0.data[f] + noise_scale * eps
    return LatentVideo(data=out, codec_id=z0.codec_id)
