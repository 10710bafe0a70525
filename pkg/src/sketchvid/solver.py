"""Reverse-process samplers over an abstract noise-predicting denoiser.

The generative flow is integrated as the probability-flow ordinary
differential equation of the variance-preserving process,

    dz/dt = F(z, t) = -1/2 * beta(t) * z - 1/2 * g^2(t) * score(z, t),
    score(z, t) = -eps_hat(z, t) / sqrt(1 - alpha_bar(t)),

with ``g^2(t) = beta(t)``. Written out,

    F(z, t) = -1/2 * beta(t) * (z - eps_hat(z, t) / sqrt(1 - alpha_bar(t))).

This is the unique drift for which deterministic integration transports the
noised marginals back to the data distribution; a unit-normal data prior
makes it vanish identically (the stationary point of the flow). Two
steppers are provided:

``step_dpmpp2``
    Deterministic two-stage second-order update

        z_prev = z + lambda1 * F(z, t) + lambda2 * F(z + lambda3 * F(z, t), t_mid)

    The intermediate time ``t_mid`` is placed where the half-log-SNR
    ``0.5 * ln(ab / (1 - ab))`` equals the mean of its endpoint values, and
    the step-size coefficients adapt to that node so the update stays second
    order: writing ``h = t_prev - t`` and ``c = (t_mid - t) / h``,

        lambda1 = h * (1 - 1 / (2c)),  lambda2 = h / (2c),  lambda3 = c * h,

    which satisfies the order-2 conditions ``b1 + b2 = 1``, ``b2 * c = 1/2``
    of the explicit two-stage Runge-Kutta family (the classical midpoint
    rule is the special case c = 1/2). ``c`` is clamped to [0.05, 0.95]; on
    the final step to t = 0, where the log-SNR diverges, the node falls back
    to the time midpoint.

``step_ddpm``
    Standard stochastic ancestral update from the noise prediction, with a
    variance-free posterior-mean step at t = 1.

``GaussianDenoiser`` supplies the exact posterior noise estimate for data
drawn from an isotropic normal prior, which turns the flow into a linear ODE
with a closed-form solution - the oracle used by the accuracy tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .codec import LatentVideo
from .errors import ConfigError, DataError, NumericalError
from .schedule import NoiseSchedule, stream_rng


@runtime_checkable
class Denoiser(Protocol):
    """Contract for anything that predicts the noise component of a latent.

    ``predict`` must return a tensor of the input's shape, finite for finite
    input. ``supports_concurrent_calls`` tells the pipeline whether calls
    may be issued from several threads at once; otherwise they are
    serialized.
    """

    supports_concurrent_calls: bool

    def predict(self, z: LatentVideo, t: float, conditioning: str = "") -> LatentVideo:
        ...


@dataclass
class GaussianDenoiser:
    """Exact posterior noise estimate for a N(mu, sigma^2 I) data prior.

    For z_t = sqrt(ab) z0 + sqrt(1-ab) eps the conditional expectation of
    the noise is

        E[eps | z_t] = sqrt(1-ab) * (z_t - sqrt(ab) * mu) / (ab sigma^2 + 1 - ab).

    Evaluating it needs the schedule, so one is bound at construction.
    """

    schedule: NoiseSchedule
    mu: float = 0.0
    sigma: float = 1.0
    supports_concurrent_calls: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    def predict(self, z: LatentVideo, t: float, conditioning: str = "") -> LatentVideo:
        ab = self.schedule.alpha_bar(t)
        denom = ab * self.sigma ** 2 + (1.0 - ab)
        eps = math.sqrt(1.0 - ab) * (z.data - math.sqrt(ab) * self.mu) / denom
        return LatentVideo(data=eps, codec_id=z.codec_id)


@dataclass(frozen=True)
class SolverCoefficients:
    """Adaptive step-size coefficients of one two-stage update."""

    lambda1: float
    lambda2: float
    lambda3: float
    t_mid: float


def drift(z: LatentVideo, t: float, d: Denoiser, s: NoiseSchedule,
          conditioning: str = "") -> LatentVideo:
    """Estimated probability-flow drift at time ``t`` in (0, T].

    ``-1/2 beta(t) z + 1/2 g^2(t) eps_hat / sqrt(1 - alpha_bar(t))`` with
    ``g^2 = beta`` (both follow the schedule's continuous interpolation
    law, so integer ``t`` reproduces the stored per-step values exactly).
    """
    if not 0 < t <= s.num_steps:
        raise ConfigError(f"drift time t={t} outside (0, {s.num_steps}]")
    eps_hat = d.predict(z, t, conditioning)
    if eps_hat.data.shape != z.data.shape:
        raise DataError(
            f"denoiser changed shape {z.data.shape} -> {eps_hat.data.shape}"
        )
    b = s.beta(t)
    g2 = b
    sigma_t = math.sqrt(1.0 - s.alpha_bar(t))
    out = -0.5 * b * z.data + (0.5 * g2 / sigma_t) * eps_hat.data
    return LatentVideo(data=out, codec_id=z.codec_id)


def dpmpp2_coefficients(t: float, t_prev: float,
                        s: NoiseSchedule) -> SolverCoefficients:
    """Coefficients for one backward step from ``t`` down to ``t_prev``."""
    if not 0 <= t_prev < t <= s.num_steps:
        raise ConfigError(f"need 0 <= t_prev < t <= T, got {t_prev}, {t}")
    h = t_prev - t
    lam_hi = s.log_snr(t)
    lam_lo = s.log_snr(t_prev)
    t_mid = 0.5 * (t + t_prev)
    if math.isfinite(lam_lo) and math.isfinite(lam_hi):
        try:
            t_mid = s.time_at_log_snr(0.5 * (lam_lo + lam_hi), t_prev, t)
        except ConfigError:
            pass  # keep time midpoint when inversion cannot bracket
    c = (t_mid - t) / h
    c = min(max(c, 0.05), 0.95)
    return SolverCoefficients(
        lambda1=h * (1.0 - 1.0 / (2.0 * c)),
        lambda2=h / (2.0 * c),
        lambda3=c * h,
        t_mid=t + c * h,
    )


def step_dpmpp2(z_t: LatentVideo, t: float, t_prev: float, d: Denoiser,
                s: NoiseSchedule, conditioning: str = "") -> LatentVideo:
    """Deterministic second-order update from ``t`` to ``t_prev`` (no noise)."""
    coeffs = dpmpp2_coefficients(t, t_prev, s)
    try:
        k1 = drift(z_t, t, d, s, conditioning)
        z_mid = LatentVideo(data=z_t.data + coeffs.lambda3 * k1.data,
                            codec_id=z_t.codec_id)
        k2 = drift(z_mid, coeffs.t_mid, d, s, conditioning)
        out = z_t.data + coeffs.lambda1 * k1.data + coeffs.lambda2 * k2.data
        return LatentVideo(data=out, codec_id=z_t.codec_id)
    except DataError as exc:
        raise NumericalError(
            f"non-finite intermediate in step {t} -> {t_prev}: {exc}"
        ) from exc


def step_ddpm(z_t: LatentVideo, t: int, d: Denoiser, s: NoiseSchedule,
              seed: int, conditioning: str = "") -> LatentVideo:
    """Stochastic ancestral update from integer ``t`` to ``t - 1``.

    The injected noise is the Philox substream ``(seed, 1, t)``; the final
    step t = 1 is the variance-free posterior mean.
    """
    if not 1 <= t <= s.num_steps:
        raise ConfigError(f"step time t={t} outside [1, {s.num_steps}]")
    eps_hat = d.predict(z_t, t, conditioning)
    if eps_hat.data.shape != z_t.data.shape:
        raise DataError(
            f"denoiser changed shape {z_t.data.shape} -> {eps_hat.data.shape}"
        )
    ab_t = s.alpha_bars[t]
    ab_prev = s.alpha_bars[t - 1]
    beta_t = s.betas[t - 1]
    alpha_t = 1.0 - beta_t

    x0 = (z_t.data - math.sqrt(1.0 - ab_t) * eps_hat.data) / math.sqrt(ab_t)
    mean = (math.sqrt(ab_prev) * beta_t / (1.0 - ab_t)) * x0 \
        + (math.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)) * z_t.data
    if t > 1:
        var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
        xi = stream_rng(seed, 1, t).standard_normal(z_t.data.shape)
        mean = mean + math.sqrt(var) * xi
    try:
        return LatentVideo(data=mean, codec_id=z_t.codec_id)
    except DataError as exc:
        raise NumericalError(
            f"non-finite state after ancestral step t={t}: {exc}"
        ) from exc


def build_grid(t_inv: float, num_steps: int, s: NoiseSchedule,
               grid: str = "uniform_t") -> list[float]:
    """Descending time grid ``t_inv = tau_0 > ... > tau_N = 0``.

    ``uniform_t`` spaces nodes evenly in t. ``uniform_logsnr`` spaces the
    interior nodes evenly in half-log-SNR down to t = min(1, t_inv / 2) and
    then closes with a final step to 0 (the log-SNR diverges there).
    """
    if num_steps < 1:
        raise ConfigError(f"num_steps must be >= 1, got {num_steps}")
    if grid == "uniform_t":
        return [t_inv * (1.0 - i / num_steps) for i in range(num_steps + 1)]
    if grid == "uniform_logsnr":
        if num_steps == 1:
            return [t_inv, 0.0]
        t_last = min(1.0, t_inv / 2.0)
        lam0 = s.log_snr(t_inv)
        lam1 = s.log_snr(t_last)
        nodes = [t_inv]
        for i in range(1, num_steps):
            lam = lam0 + (lam1 - lam0) * i / (num_steps - 1)
            nodes.append(s.time_at_log_snr(lam, t_last, t_inv))
        nodes.append(0.0)
        return nodes
    raise ConfigError(f"unknown grid kind {grid!r}")


def sample_from(z_init: LatentVideo, t_inv: int, d: Denoiser, s: NoiseSchedule,
                kind: str = "dpmpp2", seed: int = 0,
                num_steps: int | None = None, grid: str = "uniform_t",
                conditioning: str = "") -> LatentVideo:
    """Run the chosen stepper from ``t_inv`` down to 0.

    ``t_inv = 0`` is the degenerate no-op grid and returns ``z_init``
    unchanged. The ancestral sampler always walks unit steps; ``num_steps``
    controls the deterministic sampler's grid (default ``min(50, t_inv)``).
    """
    if not 0 <= t_inv <= s.num_steps:
        raise ConfigError(f"t_inv={t_inv} outside [0, {s.num_steps}]")
    if t_inv == 0:
        return z_init

    z = z_init
    if kind == "ddpm":
        for t in range(int(t_inv), 0, -1):
            z = step_ddpm(z, t, d, s, seed, conditioning)
        return z
    if kind == "dpmpp2":
        n = num_steps if num_steps is not None else min(50, int(t_inv))
        nodes = build_grid(float(t_inv), n, s, grid)
        for hi, lo in zip(nodes[:-1], nodes[1:]):
            z = step_dpmpp2(z, hi, lo, d, s, conditioning)
        return z
    raise ConfigError(f"unknown solver kind {kind!r}")
