"""Stochastic simulators and exact log-densities for the four channel families.

Families and their received-signal models for a codeword c of length 2K:

    awgn       y = c + z,            z ~ N(0, sigma^2 I)
    bursty     y = c + z + D n,      D_ii ~ Bernoulli(alpha), n ~ N(0, sigma_b^2 I)
    memory     y = c + z,            z_0 ~ N(0, sigma^2),
                                     z_i = alpha z_{i-1} + sqrt(1-alpha^2) n_i,
                                     n_i ~ N(0, sigma^2)  (stationary AR(1))
    multipath  y = c + beta c^d + z, delay d ~ Uniform{1..K}, c^d_i = c_{i-d}
                                     for i > d (1-based) and 0 before the echo

SNR convention: sigma = 10^(-snr_db/20), i.e. snr_db = -20 log10(sigma).
All densities are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

FAMILIES = ("awgn", "bursty", "memory", "multipath")

_LOG_2PI = float(np.log(2.0 * np.pi))


def snr_to_sigma(snr_db: float) -> float:
    """Noise standard deviation for a signal-to-noise ratio in dB."""
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    return float(10.0 ** (-snr_db / 20.0))


def sigma_to_snr(sigma: float) -> float:
    """Inverse of snr_to_sigma (exact up to float rounding)."""
    if not (sigma > 0):
        raise ValueError("sigma must be positive")
    return float(-20.0 * np.log10(sigma))


@dataclass(frozen=True)
class ChannelSpec:
    """One concrete channel: a family tag plus its parameters in linear units.

    Unused parameters for a family stay None.  sigma is the background noise
    std for every family; bursty adds (sigma_b, alpha), memory adds alpha
    (the AR coefficient), multipath adds beta (the echo attenuation).
    """

    family: str
    sigma: float
    sigma_b: float | None = None
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown channel family {self.family!r}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive and finite")
        if self.family == "bursty":
            if self.sigma_b is None or not (self.sigma_b > 0):
                raise ValueError("bursty channel needs sigma_b > 0")
            if self.alpha is None or not (0.0 <= self.alpha <= 1.0):
                raise ValueError("bursty channel needs alpha in [0, 1]")
        elif self.family == "memory":
            if self.alpha is None or not (abs(self.alpha) < 1.0):
                raise ValueError("memory channel needs |alpha| < 1")
        elif self.family == "multipath":
            if self.beta is None or not (self.beta >= 0.0):
                raise ValueError("multipath channel needs beta >= 0")

    def param_values(self) -> tuple[float, ...]:
        """Family-specific parameters in a fixed documented order.

        awgn: (snr_db,); bursty: (snr_db, snr_b_db, alpha);
        memory: (snr_db, alpha); multipath: (snr_db, beta).
        dB values use the library's SNR convention.
        """
        snr = sigma_to_snr(self.sigma)
        if self.family == "awgn":
            return (snr,)
        if self.family == "bursty":
            return (snr, sigma_to_snr(self.sigma_b), float(self.alpha))
        if self.family == "memory":
            return (snr, float(self.alpha))
        return (snr, float(self.beta))


def _check_codeword(c) -> np.ndarray:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 1 or c.size == 0 or c.size % 2 != 0:
        raise ValueError("codeword must be a 1-D vector of even length 2K")
    return c


def _delayed(c: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros_like(c)
    out[d:] = c[: c.size - d]
    return out


def transmit_batch(c, spec: ChannelSpec, n: int, rng: np.random.Generator,
                   *, delay: int | None = None) -> np.ndarray:
    """Draw n independent received signals for codeword c; returns (n, 2K).

    Draw order per family (so streams are reproducible from a seeded rng):
    awgn: one (n, 2K) normal block.  bursty: background normals, then the
    (n, 2K) uniform block for the burst mask, then burst normals.  memory:
    2K column blocks of n normals, first the initial state then the AR
    innovations.  multipath: the (n,) delay block first, then normals.
    `delay` forces the multipath delay (testing hook); it must lie in 1..K.
    """
    c = _check_codeword(c)
    length = c.size
    if n < 1:
        raise ValueError("need n >= 1 draws")
    fam = spec.family
    if fam == "awgn":
        return c + rng.normal(0.0, spec.sigma, (n, length))
    if fam == "bursty":
        z = rng.normal(0.0, spec.sigma, (n, length))
        mask = rng.random((n, length)) < spec.alpha
        burst = rng.normal(0.0, spec.sigma_b, (n, length))
        return c + z + mask * burst
    if fam == "memory":
        z = np.empty((n, length))
        z[:, 0] = rng.normal(0.0, spec.sigma, n)
        scale = np.sqrt(1.0 - spec.alpha ** 2)
        for i in range(1, length):
            z[:, i] = spec.alpha * z[:, i - 1] + scale * rng.normal(0.0, spec.sigma, n)
        return c + z
    # multipath
    k_msg = length // 2
    if delay is None:
        d = rng.integers(1, k_msg + 1, size=n)
    else:
        if not (1 <= delay <= k_msg):
            raise ValueError("forced delay must lie in 1..K")
        d = np.full(n, delay, dtype=np.int64)
    z = rng.normal(0.0, spec.sigma, (n, length))
    y = c + z
    for dv in np.unique(d):
        y[d == dv] += spec.beta * _delayed(c, int(dv))
    return y


def transmit(c, spec: ChannelSpec, rng: np.random.Generator,
             *, delay: int | None = None) -> np.ndarray:
    """Draw one received signal y for codeword c under the given channel."""
    return transmit_batch(c, spec, 1, rng, delay=delay)[0]


def _gauss_logpdf(sq_err, length: int, var: float):
    return -0.5 * (length * (_LOG_2PI + np.log(var)) + sq_err / var)


def log_density(y, c, spec: ChannelSpec):
    """Exact log p(y | c, spec) in nats; y may be (2K,) or a (n, 2K) batch.

    bursty uses the per-coordinate two-component scale mixture; memory uses
    the stationary AR(1) covariance sigma^2 alpha^|i-j| evaluated through its
    tridiagonal precision matrix; multipath marginalizes the uniform delay
    with log-sum-exp.
    """
    c = _check_codeword(c)
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    yb = y[None, :] if single else y
    if yb.ndim != 2 or yb.shape[1] != c.size:
        raise ValueError("y must have the codeword's length 2K")
    if not np.isfinite(yb).all():
        raise ValueError("y must be finite")
    length = c.size
    e = yb - c
    fam = spec.family
    var = spec.sigma ** 2

    if fam == "awgn":
        out = _gauss_logpdf((e ** 2).sum(axis=1), length, var)
    elif fam == "bursty":
        a = spec.alpha
        lp_bg = -0.5 * (_LOG_2PI + np.log(var) + e ** 2 / var)
        if a == 0.0:
            out = lp_bg.sum(axis=1)
        else:
            var_burst = var + spec.sigma_b ** 2
            lp_burst = -0.5 * (_LOG_2PI + np.log(var_burst) + e ** 2 / var_burst)
            if a == 1.0:
                out = lp_burst.sum(axis=1)
            else:
                out = np.logaddexp(np.log1p(-a) + lp_bg, np.log(a) + lp_burst).sum(axis=1)
    elif fam == "memory":
        a = spec.alpha
        # precision of the AR(1) covariance is tridiagonal:
        # Q = (e0^2 + e_{L-1}^2 + (1+a^2) sum_mid e_i^2 - 2a sum e_i e_{i+1}) / (var (1-a^2))
        quad = e[:, 0] ** 2 + e[:, -1] ** 2
        if length > 2:
            quad = quad + (1.0 + a ** 2) * (e[:, 1:-1] ** 2).sum(axis=1)
        quad = quad - 2.0 * a * (e[:, :-1] * e[:, 1:]).sum(axis=1)
        quad = quad / (var * (1.0 - a ** 2))
        logdet = length * np.log(var) + (length - 1) * np.log(1.0 - a ** 2)
        out = -0.5 * (length * _LOG_2PI + logdet + quad)
    else:  # multipath
        k_msg = length // 2
        comps = np.empty((yb.shape[0], k_msg))
        for d in range(1, k_msg + 1):
            ed = yb - (c + spec.beta * _delayed(c, d))
            comps[:, d - 1] = _gauss_logpdf((ed ** 2).sum(axis=1), length, var)
        out = logsumexp(comps, axis=1) - np.log(k_msg)

    return float(out[0]) if single else out


def empirical_moments(spec: ChannelSpec, c, n: int, rng: np.random.Generator):
    """Per-coordinate sample mean and variance of y over n draws."""
    if n < 2:
        raise ValueError("need n >= 2 samples for a variance")
    y = transmit_batch(c, spec, n, rng)
    return y.mean(axis=0), y.var(axis=0, ddof=1)
