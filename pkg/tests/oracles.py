"""Independent oracles used by the test suite.

These deliberately avoid the code paths they check: the running product is
a plain Python loop, and the linear-ODE endpoint is the closed-form
variation-of-constants solution with its integrals evaluated by composite
Simpson quadrature on a knot-aligned fine grid (no time stepping).
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from sketchvid.schedule import NoiseSchedule, beta_law


def running_product_alpha_bars(betas) -> list[float]:
    """Sequential product with scalar Python floats."""
    out = [1.0]
    acc = 1.0
    for b in betas:
        acc = acc * (1.0 - float(b))
        out.append(acc)
    return out


def gaussian_flow_coefficients(s: NoiseSchedule, mu: float, sigma: float,
                               ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """a(t), b(t) of the linear ODE dz/dt = a z + b that the flow becomes
    when the denoiser is the exact posterior for a N(mu, sigma^2 I) prior.

    Substituting eps_hat = sqrt(1-ab)(z - sqrt(ab) mu) / (ab sigma^2 + 1-ab)
    into the probability-flow drift gives

        a(t) = -1/2 beta(t) (1 - 1 / (ab sigma^2 + 1 - ab)),
        b(t) = -1/2 beta(t) sqrt(ab) mu / (ab sigma^2 + 1 - ab).
    """
    ab = s.alpha_bar_dense(ts)
    beta = beta_law(s.kind, s.num_steps, s.beta_start, s.beta_end, ts)
    denom = ab * sigma ** 2 + (1.0 - ab)
    a = -0.5 * beta * (1.0 - 1.0 / denom)
    b = -0.5 * beta * np.sqrt(ab) * mu / denom
    return a, b


def linear_ode_endpoint_map(s: NoiseSchedule, mu: float, sigma: float,
                            t_start: float,
                            samples_per_unit: int = 100) -> tuple[float, float]:
    """Closed-form endpoint map z(0) = G z(t_start) + H of the linear flow.

    Variation of constants with A(t) = integral_0^t a:

        z(0) = exp(-A(t_start)) z(t_start) - integral_0^{t_start} exp(-A(u)) b(u) du.

    The grid is aligned with the integer schedule knots so Simpson pairs
    never straddle an interpolation boundary.
    """
    n = int(round(t_start * samples_per_unit))
    if n % 2:
        n += 1
    ts = np.linspace(0.0, t_start, n + 1)
    a, b = gaussian_flow_coefficients(s, mu, sigma, ts)
    big_a = cumulative_simpson(a, x=ts, initial=0.0)
    gain = float(np.exp(-big_a[-1]))
    offset = -float(simpson(np.exp(-big_a) * b, x=ts))
    return gain, offset
