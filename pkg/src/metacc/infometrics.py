"""Diversity and shift scores for task priors, with Monte-Carlo density oracles.

Diversity is the mutual information between the channel parameter vector and
the received signal given a fixed codeword, averaged over random codewords.
Shift distance is the codeword-conditioned KL divergence between the received
signal laws of two priors, symmetrized by default.  Both are estimated with
k-nearest-neighbour methods; the oracles integrate the exact channel densities
by Monte Carlo and exist to validate the estimators.  All values are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, logsumexp

from .channels import FAMILIES, ChannelSpec, log_density, transmit_batch
from .codec import conv_encode
from .taskdist import (FAMILY_PARAMS, TaskDistributionSpec, channel_params,
                       sample_task)

# uniform jitter applied before neighbour searches to break duplicate distances
JITTER = 1e-10
_JITTER_SEED = 0x6A17

_OMEGA_COLUMNS = ("snr_db", "snr_b_db", "alpha", "beta")


@dataclass(frozen=True)
class MetricEstimate:
    value: float            # nats
    stderr: float           # spread across codeword replicates
    estimator: str          # "ksg" | "knn_kl" | "mc_oracle"
    n: int                  # samples per codeword
    m_codewords: int
    k: int | None           # neighbour count, None for oracles

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be non-negative")

    def to_json_row(self, scenario: str, seed: int) -> dict:
        return {"scenario": scenario, "estimator": self.estimator,
                "value": self.value, "stderr": self.stderr,
                "n": self.n, "M": self.m_codewords, "k": self.k, "seed": seed}


def _as_samples(a, name) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"{name} must be an (n, d) sample matrix")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _standardize(a: np.ndarray) -> np.ndarray:
    mu = a.mean(axis=0)
    sd = a.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return (a - mu) / sd


def _jittered(*arrays):
    rng = np.random.default_rng(_JITTER_SEED)
    return tuple(a + rng.uniform(0.0, JITTER, size=a.shape) for a in arrays)


def ksg_mi(x_samples, y_samples, k: int = 3) -> float:
    """Mutual information between paired samples, nats.

    Nearest-neighbour estimator (variant #1): psi(k) + psi(n) minus the mean of
    psi(n_x+1) + psi(n_y+1), with max-norm neighbourhoods of the k-th joint
    neighbour distance.  Marginals are z-scored first.
    """
    x = _standardize(_as_samples(x_samples, "x_samples"))
    y = _standardize(_as_samples(y_samples, "y_samples"))
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y must be paired (same number of rows)")
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    x, y = _jittered(x, y)
    joint = np.hstack([x, y])
    eps = cKDTree(joint).query(joint, k=k + 1, p=np.inf)[0][:, -1]
    inner = np.nextafter(eps, 0.0)  # strictly inside the k-th neighbour ball
    n_x = cKDTree(x).query_ball_point(x, inner, p=np.inf, return_length=True) - 1
    n_y = cKDTree(y).query_ball_point(y, inner, p=np.inf, return_length=True) - 1
    return float(digamma(k) + digamma(n)
                 - np.mean(digamma(n_x + 1) + digamma(n_y + 1)))


def knn_kl(p_samples, q_samples, k: int = 3) -> float:
    """KL divergence D(p || q) from two sample sets, nats.

    k-NN estimator: (d/n) sum ln(nu_k/rho_k) + ln(m/(n-1)), Euclidean metric,
    where rho_k is the k-th neighbour distance within p and nu_k the k-th
    neighbour distance from each p point into q.
    """
    p = _as_samples(p_samples, "p_samples")
    q = _as_samples(q_samples, "q_samples")
    if p.shape[1] != q.shape[1]:
        raise ValueError("sample sets must share a dimension")
    n, d = p.shape
    m = q.shape[0]
    if not (1 <= k < n and k < m):
        raise ValueError(f"need 1 <= k < min(n, m), got k={k}, n={n}, m={m}")
    p, q = _jittered(p, q)
    rho = cKDTree(p).query(p, k=[k + 1])[0][:, 0]
    nu = cKDTree(q).query(p, k=[k])[0][:, 0]
    rho = np.maximum(rho, 1e-300)
    nu = np.maximum(nu, 1e-300)
    return float(d / n * np.sum(np.log(nu / rho)) + np.log(m / (n - 1)))


# ---------------------------------------------------------------------------
# sampling glue

def _multi_family(spec: TaskDistributionSpec) -> bool:
    return len({c.family for c in spec.components}) > 1


def omega_matrix(channels: list[ChannelSpec], with_family: bool) -> np.ndarray:
    """Numeric task-parameter rows (dB / unitless).  Families share a fixed
    column order; parameters a family lacks sit at 0.  Across families an
    index coordinate is appended, scaled near the span of the other columns
    (the scale is a labeling choice; estimators z-score their inputs anyway).
    """
    fams = {ch.family for ch in channels}
    used = [c for c in _OMEGA_COLUMNS
            if any(c in FAMILY_PARAMS[f] for f in fams)]
    base = np.zeros((len(channels), len(used)))
    for i, ch in enumerate(channels):
        params = channel_params(ch)
        for j, cname in enumerate(used):
            base[i, j] = params.get(cname, 0.0)
    if with_family:
        idx = np.array([float(FAMILIES.index(ch.family)) for ch in channels])
        span = float(np.ptp(base, axis=0).max()) if base.size else 0.0
        span = span if span > 0 else 1.0
        base = np.hstack([base, (idx * span / (len(FAMILIES) - 1))[:, None]])
    return base


def _draw_conditional(spec: TaskDistributionSpec, codeword: np.ndarray,
                      n: int, rng) -> tuple[list[ChannelSpec], np.ndarray]:
    """Paired draws omega ~ prior, y ~ channel(omega) for one codeword."""
    chans = [sample_task(spec, rng) for _ in range(n)]
    y = np.empty((n, codeword.size))
    for i, ch in enumerate(chans):
        y[i] = transmit_batch(codeword, ch, 1, rng)[0]
    return chans, y


def _random_codeword(rng, k_message: int) -> np.ndarray:
    msg = rng.integers(0, 2, size=k_message).astype(np.uint8)
    return conv_encode(msg).astype(np.float64)


def _summarize(values, estimator, n, m, k) -> MetricEstimate:
    vals = np.asarray(values, dtype=np.float64)
    value = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return MetricEstimate(value, stderr, estimator, n, m, k)


def diversity_score(spec: TaskDistributionSpec,
                    m_codewords: int = 20,
                    n_samples: int = 2000,
                    k: int = 3,
                    k_message: int = 10,
                    rng=None) -> MetricEstimate:
    """Mean over random codewords of the estimated MI between the task
    parameters and the received signal.  A prior concentrated on one channel
    carries no information, so it short-circuits to exactly zero.
    """
    if m_codewords < 1:
        raise ValueError("need at least one codeword replicate")
    if n_samples <= k:
        raise ValueError("need n_samples > k")
    if spec.point_support() is not None:
        return MetricEstimate(0.0, 0.0, "ksg", n_samples, m_codewords, k)
    if rng is None:
        rng = np.random.default_rng(0)
    with_family = _multi_family(spec)
    vals = []
    for _ in range(m_codewords):
        cw = _random_codeword(rng, k_message)
        chans, y = _draw_conditional(spec, cw, n_samples, rng)
        vals.append(ksg_mi(omega_matrix(chans, with_family), y, k))
    return _summarize(vals, "ksg", n_samples, m_codewords, k)


def _shift_pair_values(spec_a, spec_b, m_codewords, n_samples, k, k_message,
                       rng, want_reverse=True):
    fwd, rev = [], []
    for _ in range(m_codewords):
        cw = _random_codeword(rng, k_message)
        _, ya = _draw_conditional(spec_a, cw, n_samples, rng)
        _, yb = _draw_conditional(spec_b, cw, n_samples, rng)
        fwd.append(knn_kl(ya, yb, k))
        if want_reverse:
            rev.append(knn_kl(yb, ya, k))
    return np.array(fwd), (np.array(rev) if want_reverse else None)


def shift_distance(spec_a: TaskDistributionSpec,
                   spec_b: TaskDistributionSpec,
                   m_codewords: int = 20,
                   n_samples: int = 2000,
                   k: int = 3,
                   mode: str = "symmetric",
                   k_message: int = 10,
                   rng=None) -> MetricEstimate:
    """Codeword-conditioned KL divergence between two priors' received-signal
    laws, averaged over shared random codewords.  Symmetric mode sums both
    directions on the same sample sets; asymmetric keeps the a-to-b term.
    """
    if mode not in ("symmetric", "asymmetric"):
        raise ValueError("mode must be 'symmetric' or 'asymmetric'")
    if m_codewords < 1:
        raise ValueError("need at least one codeword replicate")
    if rng is None:
        rng = np.random.default_rng(0)
    fwd, rev = _shift_pair_values(spec_a, spec_b, m_codewords, n_samples, k,
                                  k_message, rng, want_reverse=(mode == "symmetric"))
    per = fwd + rev if mode == "symmetric" else fwd
    return _summarize(per, "knn_kl", n_samples, m_codewords, k)


# ---------------------------------------------------------------------------
# Monte-Carlo density oracles

def _marginal_logpdf(y: np.ndarray, codeword: np.ndarray,
                     spec: TaskDistributionSpec, n_omega: int, rng) -> np.ndarray:
    """log p(y|c) with the task parameter integrated out by log-sum-exp over
    fresh prior draws; exact (single term) for point priors."""
    point = spec.point_support()
    if point is not None:
        return np.asarray(log_density(y, codeword, point))
    draws = [sample_task(spec, rng) for _ in range(n_omega)]
    rows = np.stack([log_density(y, codeword, ch) for ch in draws])
    return logsumexp(rows, axis=0) - np.log(n_omega)


def mc_kl_oracle(spec_a: TaskDistributionSpec,
                 spec_b: TaskDistributionSpec,
                 m_codewords: int = 20,
                 n_samples: int = 2000,
                 n_omega: int = 128,
                 mode: str = "symmetric",
                 k_message: int = 10,
                 rng=None) -> MetricEstimate:
    """Shift distance computed from the exact channel densities by Monte Carlo."""
    if mode not in ("symmetric", "asymmetric"):
        raise ValueError("mode must be 'symmetric' or 'asymmetric'")
    if rng is None:
        rng = np.random.default_rng(0)
    per = []
    for _ in range(m_codewords):
        cw = _random_codeword(rng, k_message)
        _, ya = _draw_conditional(spec_a, cw, n_samples, rng)
        val = np.mean(_marginal_logpdf(ya, cw, spec_a, n_omega, rng)
                      - _marginal_logpdf(ya, cw, spec_b, n_omega, rng))
        if mode == "symmetric":
            _, yb = _draw_conditional(spec_b, cw, n_samples, rng)
            val += np.mean(_marginal_logpdf(yb, cw, spec_b, n_omega, rng)
                           - _marginal_logpdf(yb, cw, spec_a, n_omega, rng))
        per.append(float(val))
    return _summarize(per, "mc_oracle", n_samples, m_codewords, None)


def mc_mi_oracle(spec: TaskDistributionSpec,
                 m_codewords: int = 20,
                 n_samples: int = 2000,
                 n_omega: int = 128,
                 k_message: int = 10,
                 rng=None) -> MetricEstimate:
    """Diversity computed from the exact channel densities by Monte Carlo."""
    if spec.point_support() is not None:
        return MetricEstimate(0.0, 0.0, "mc_oracle", n_samples, m_codewords, None)
    if rng is None:
        rng = np.random.default_rng(0)
    per = []
    for _ in range(m_codewords):
        cw = _random_codeword(rng, k_message)
        chans, y = _draw_conditional(spec, cw, n_samples, rng)
        cond = np.array([float(log_density(y[i], cw, chans[i]))
                         for i in range(n_samples)])
        marg = _marginal_logpdf(y, cw, spec, n_omega, rng)
        per.append(float(np.mean(cond - marg)))
    return _summarize(per, "mc_oracle", n_samples, m_codewords, None)
