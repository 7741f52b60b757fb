"""Mixture emission densities: Bernoulli for binary frames, Gaussian for MFCC.

Everything runs in the log domain; with feature dimensions in the
hundreds or thousands the raw product/exponential forms underflow.
Bernoulli parameters are floored away from 0 and 1 so unseen activations
keep nonzero mass, and diagonal Gaussian variances are floored against
collapse.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from sparseasr.errors import InvalidInputError

logger = logging.getLogger(__name__)

BERNOULLI_FLOOR = 1e-4
VARIANCE_FLOOR = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class BernoulliMixture:
    """M multivariate independent-Bernoulli components with mixing priors."""

    priors: np.ndarray  # (M,)
    probs: np.ndarray   # (M, N) in [floor, 1 - floor]

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mixture priors must sum to 1")
        if np.any(self.probs < BERNOULLI_FLOOR) or np.any(self.probs > 1 - BERNOULLI_FLOOR):
            raise InvalidInputError("Bernoulli parameters outside the floored range")

    @property
    def n_components(self):
        return self.priors.size

    @property
    def dim(self):
        return self.probs.shape[1]

    def log_components(self, x):
        """Per-component log mass of binary rows `x`: an (T, M) matrix."""
        x = _check_binary(x, self.dim)
        log_p = np.log(self.probs)
        log_q = np.log1p(-self.probs)
        # sum_n [x log p + (1 - x) log(1 - p)] = x (log p - log q) + sum log q
        return x @ (log_p - log_q).T + log_q.sum(axis=1)

    def log_pdf(self, x):
        """Log mass of one binary vector or per-row for a matrix."""
        single = np.asarray(x).ndim == 1
        lc = self.log_components(np.atleast_2d(x))
        out = logsumexp(lc + np.log(self.priors), axis=1)
        return float(out[0]) if single else out


@dataclass
class GaussianMixture:
    """M diagonal-covariance Gaussian components with mixing priors."""

    priors: np.ndarray     # (M,)
    means: np.ndarray      # (M, N)
    variances: np.ndarray  # (M, N), floored

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mixture priors must sum to 1")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise InvalidInputError("variance below floor")

    @property
    def n_components(self):
        return self.priors.size

    @property
    def dim(self):
        return self.means.shape[1]

    def log_components(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise InvalidInputError(f"dim {x.shape[1]} != mixture dim {self.dim}")
        const = -0.5 * (self.dim * LOG_2PI + np.log(self.variances).sum(axis=1))
        diff = x[:, None, :] - self.means[None, :, :]
        quad = -0.5 * np.sum(diff * diff / self.variances[None, :, :], axis=2)
        return quad + const

    def log_pdf(self, x):
        single = np.asarray(x).ndim == 1
        lc = self.log_components(np.atleast_2d(x))
        out = logsumexp(lc + np.log(self.priors), axis=1)
        return float(out[0]) if single else out


def _check_binary(x, dim):
    x = np.atleast_2d(np.asarray(x))
    if x.shape[1] != dim:
        raise InvalidInputError(f"dim {x.shape[1]} != mixture dim {dim}")
    vals = np.unique(x)
    if not np.all(np.isin(vals, (0, 1))):
        raise InvalidInputError("Bernoulli mixture requires binary data")
    return x.astype(np.float64)


def log_pdf(mix, x):
    """Log density (Gaussian) or log mass (Bernoulli) of `x` under `mix`."""
    return mix.log_pdf(x)


def responsibilities(mix, data):
    """Posterior component memberships, one simplex row per datum."""
    joint = mix.log_components(data) + np.log(mix.priors)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def init_bernoulli(n_components, data, rng):
    """Uniform priors; parameters at the data column mean plus small seeded
    noise, which breaks the symmetric configurations EM cannot leave."""
    data = _check_binary(np.asarray(data), np.asarray(data).shape[1])
    mean = data.mean(axis=0)
    probs = mean[None, :] + rng.uniform(-0.05, 0.05, (n_components, data.shape[1]))
    probs = np.clip(probs, BERNOULLI_FLOOR, 1.0 - BERNOULLI_FLOOR)
    priors = np.full(n_components, 1.0 / n_components)
    return BernoulliMixture(priors=priors, probs=probs)


def init_gaussian(n_components, data, rng):
    """Means at randomly chosen data points, variances from the global one."""
    data = np.asarray(data, dtype=np.float64)
    idx = rng.choice(data.shape[0], size=n_components, replace=data.shape[0] < n_components)
    var = np.maximum(data.var(axis=0), VARIANCE_FLOOR)
    priors = np.full(n_components, 1.0 / n_components)
    return GaussianMixture(priors=priors, means=data[idx].copy(),
                           variances=np.tile(var, (n_components, 1)))


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

def weighted_mstep(mix, data, resp):
    """Closed-form M-step from data and (possibly scaled) responsibilities.

    `resp` rows need not sum to one; HMM training passes state-posterior
    scaled component responsibilities. Components with vanishing total
    responsibility are re-seeded from the datum the current model likes
    least.
    """
    data = np.asarray(data, dtype=np.float64)
    totals = resp.sum(axis=0)
    starved = totals < 1e-12
    if np.any(starved):
        ll = mix.log_pdf(data)
        worst = int(np.argmin(ll))
        logger.warning("re-seeding %d empty mixture component(s) from datum %d",
                       int(starved.sum()), worst)
        resp = resp.copy()
        for m in np.flatnonzero(starved):
            resp[worst, m] = 1.0
        totals = resp.sum(axis=0)
    priors = totals / totals.sum()
    if isinstance(mix, BernoulliMixture):
        probs = (resp.T @ data) / totals[:, None]
        probs = np.clip(probs, BERNOULLI_FLOOR, 1.0 - BERNOULLI_FLOOR)
        return BernoulliMixture(priors=priors, probs=probs)
    means = (resp.T @ data) / totals[:, None]
    sq = (resp.T @ (data * data)) / totals[:, None]
    var = np.maximum(sq - means * means, VARIANCE_FLOOR)
    return GaussianMixture(priors=priors, means=means, variances=var)


def em_fit(mix, data, iterations=50):
    """Expectation-maximization refinement of a mixture.

    Returns the fitted mixture and the total log-likelihood before each
    update; the sequence is non-decreasing up to numerical slack.
    """
    data = np.asarray(data)
    if data.shape[0] < mix.n_components:
        raise InvalidInputError(
            f"{data.shape[0]} data points for {mix.n_components} components")
    history = []
    for _ in range(iterations):
        joint = mix.log_components(data) + np.log(mix.priors)
        per_datum = logsumexp(joint, axis=1)
        history.append(float(per_datum.sum()))
        resp = np.exp(joint - per_datum[:, None])
        mix = weighted_mstep(mix, data, resp)
    return mix, history
