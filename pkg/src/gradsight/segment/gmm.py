"""Full-covariance Gaussian mixture colour models fitted by EM."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

DEFAULT_RIDGE = 1e-4


@dataclass
class GmmModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covs: np.ndarray  # (k, d, d)
    ridge: float = DEFAULT_RIDGE
    loglik_trace: list = field(default_factory=list)
    reduced: bool = False

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """``log N(x | mean_k, cov_k)`` for every sample and component, shape (n, k)."""
        x = np.asarray(x, dtype=np.float64)
        d = x.shape[1]
        out = np.empty((len(x), self.n_components))
        for k in range(self.n_components):
            chol = np.linalg.cholesky(self.covs[k])
            z = np.linalg.solve(chol, (x - self.means[k]).T)
            logdet = 2 * np.log(np.diag(chol)).sum()
            out[:, k] = -0.5 * ((z**2).sum(axis=0) + logdet + d * np.log(2 * np.pi))
        return out

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(self.component_log_pdf(x) + logw, axis=1)


def _penalised_log_terms(model: GmmModel, x: np.ndarray) -> np.ndarray:
    # the ridge is the exact M-step optimum once each component density carries
    # exp(-ridge/2 * tr(cov^-1)); EM is monotone in this penalised objective
    pen = np.array([np.trace(np.linalg.inv(c)) for c in model.covs])
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    return model.component_log_pdf(x) + logw - 0.5 * model.ridge * pen


def penalised_loglik(model: GmmModel, x: np.ndarray) -> float:
    return float(logsumexp(_penalised_log_terms(model, x), axis=1).sum())


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    d2 = ((x - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(len(x), p=d2 / total) if total > 0 else rng.integers(len(x))
        centres.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def _m_step(x, resp, ridge, fallback_means):
    n, d = x.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    means = np.array(fallback_means, dtype=np.float64)
    covs = np.empty((resp.shape[1], d, d))
    for k in range(resp.shape[1]):
        if nk[k] > 1e-12:
            means[k] = resp[:, k] @ x / nk[k]
            diff = x - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
            covs[k] = 0.5 * (covs[k] + covs[k].T)
        else:
            covs[k] = 0.0
        covs[k] += ridge * np.eye(d)
    return weights, means, covs


def fit_gmm(pixels, k: int = 5, iters: int = 10, seed: int = 0, ridge: float = DEFAULT_RIDGE) -> GmmModel:
    """Fit a ``k``-component mixture: k-means++ seeding, hard assignment, then ``iters`` EM steps.

    ``loglik_trace`` holds the (ridge-penalised) log-likelihood before the
    first step and after each step.  With fewer pixels than components ``k``
    is reduced to the pixel count and a warning is issued.
    """
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError(f"need a non-empty (n, d) pixel array, got shape {x.shape}")
    reduced = False
    if len(x) < k:
        warnings.warn(f"only {len(x)} pixels for {k} components; using k={len(x)}", RuntimeWarning)
        k, reduced = len(x), True
    rng = np.random.default_rng(seed)
    centres = _kmeans_pp(x, k, rng)
    nearest = ((x[:, None, :] - centres[None]) ** 2).sum(axis=2).argmin(axis=1)
    resp = np.eye(k)[nearest]
    model = GmmModel(*_m_step(x, resp, ridge, centres), ridge=ridge, reduced=reduced)
    model.loglik_trace.append(penalised_loglik(model, x))
    for _ in range(iters):
        terms = _penalised_log_terms(model, x)
        resp = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
        model.weights, model.means, model.covs = _m_step(x, resp, ridge, model.means)
        model.loglik_trace.append(penalised_loglik(model, x))
    return model
