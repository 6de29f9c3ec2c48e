"""Gaussian-process regression with automatic relevance determination.

Used only as a feature filter: an anisotropic RBF kernel is fitted by
marginal likelihood, and the inverse fitted lengthscales (standardized per
feature) become relevance weights.  Exact dense GP, so fitting happens on a
seeded subsample; there is no predictive posterior here.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError

_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass
class ArdModel:
    theta0: float
    lengthscales: np.ndarray  # per feature, in the feature's own units
    noise_var: float
    feature_scales: np.ndarray  # per-feature std used for relevance weights
    subsample: Optional[np.ndarray] = None
    y_shift: float = 0.0

    def __post_init__(self):
        self.lengthscales = np.asarray(self.lengthscales, dtype=np.float64)
        self.feature_scales = np.asarray(self.feature_scales, dtype=np.float64)
        if self.theta0 <= 0 or self.noise_var <= 0:
            raise ValueError("kernel amplitude and noise variance must be positive")
        if np.any(self.lengthscales <= 0) or np.any(self.feature_scales <= 0):
            raise ValueError("lengthscales and feature scales must be positive")


@dataclass
class RelevanceReport:
    weights: np.ndarray
    mask: np.ndarray


@dataclass
class ArdConfig:
    subsample: int = 2000
    restarts: int = 3
    max_iters: int = 150
    seed: int = 0

    def __post_init__(self):
        if self.subsample < 2 or self.restarts < 1 or self.max_iters < 1:
            raise ValueError("nonsensical ARD configuration")


def _sq_diffs(z):
    """Per-feature squared difference matrices, shape (d, m, m)."""
    return (z[:, None, :] - z[None, :, :]).transpose(2, 0, 1) ** 2


def _kernel(theta0, lengthscales, sq):
    quad = np.tensordot(1.0 / lengthscales**2, sq, axes=(0, 0))
    return theta0 * np.exp(-0.5 * quad)


def _chol_with_jitter(kn):
    for jit in _JITTERS:
        try:
            return cho_factor(kn + jit * np.eye(kn.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("kernel matrix is not positive definite even with jitter")


def nll(model: ArdModel, z, y) -> float:
    """Negative log marginal likelihood of the targets under the GP prior."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    sq = _sq_diffs(z)
    kn = _kernel(model.theta0, model.lengthscales, sq) \
        + model.noise_var * np.eye(z.shape[0])
    cf = _chol_with_jitter(kn)
    alpha = cho_solve(cf, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return float(0.5 * y @ alpha + 0.5 * logdet
                 + 0.5 * z.shape[0] * np.log(2.0 * np.pi))


def nll_grad(model: ArdModel, z, y):
    """(nll, gradient) over log-parameters [theta0, lengthscales..., noise]."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    m, d = z.shape
    sq = _sq_diffs(z)
    k = _kernel(model.theta0, model.lengthscales, sq)
    kn = k + model.noise_var * np.eye(m)
    cf = _chol_with_jitter(kn)
    alpha = cho_solve(cf, y)
    kinv = cho_solve(cf, np.eye(m))
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    value = float(0.5 * y @ alpha + 0.5 * logdet + 0.5 * m * np.log(2 * np.pi))
    # dnll/dp = 0.5 tr(Kn^-1 dK) - 0.5 alpha' dK alpha, contracted per block
    inner = kinv - np.outer(alpha, alpha)
    grad = np.empty(d + 2)
    grad[0] = 0.5 * np.sum(inner * k)  # d/dlog theta0
    for l in range(d):
        dk = k * (sq[l] / model.lengthscales[l] ** 2)
        grad[1 + l] = 0.5 * np.sum(inner * dk)
    grad[d + 1] = 0.5 * model.noise_var * np.trace(inner)
    return value, grad


def _unpack(p, d, scales, y_shift):
    return ArdModel(
        theta0=float(np.exp(p[0])),
        lengthscales=np.exp(p[1:1 + d]),
        noise_var=float(np.exp(p[1 + d])),
        feature_scales=scales,
        y_shift=y_shift,
    )


def fit(z, y, config: ArdConfig = None, return_history=False):
    """Maximize the marginal likelihood over log-parameters.

    Backtracking gradient descent (accepted steps strictly decrease the nll)
    from a few seeded random starts; the best final value wins.  Features are
    standardized internally; returned lengthscales are in original units.
    """
    if config is None:
        config = ArdConfig()
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if z.shape[0] != y.size:
        raise ValueError("feature and target counts differ")
    rng = np.random.default_rng(config.seed)
    if z.shape[0] > config.subsample:
        idx = rng.choice(z.shape[0], config.subsample, replace=False)
        idx.sort()
    else:
        idx = np.arange(z.shape[0])
    zs, ys = z[idx], y[idx]
    scales = zs.std(axis=0)
    scales[scales < 1e-12] = 1.0
    zn = zs / scales
    y_shift = float(ys.mean())
    yc = ys - y_shift
    y_var = max(yc.var(), 1e-12)
    d = z.shape[1]

    best = None
    best_val = np.inf
    best_hist = None
    failures = 0
    for _ in range(config.restarts):
        p = np.concatenate([
            [np.log(y_var) + rng.normal(0, 0.3)],
            rng.normal(0.0, 0.5, d),
            [np.log(0.01 * y_var) + rng.normal(0, 0.5)],
        ])
        try:
            p, val, hist = _descend(p, zn, yc, scales, y_shift, config.max_iters)
        except NumericalError:
            failures += 1
            continue
        if val < best_val:
            best_val = val
            best = p
            best_hist = hist
    if best is None:
        raise NumericalError(
            "every ARD restart failed its Cholesky factorization (%d tries)"
            % failures
        )
    model = _unpack(best, d, np.ones(d), y_shift)
    # re-express in original feature units
    model.lengthscales = model.lengthscales * scales
    model.feature_scales = scales
    model.subsample = idx
    if return_history:
        return model, best_hist
    return model


def _descend(p, zn, yc, scales, y_shift, max_iters):
    ones = np.ones(zn.shape[1])
    val, grad = nll_grad(_unpack(p, zn.shape[1], ones, y_shift), zn, yc)
    hist = [val]
    lr = 0.1
    for _ in range(max_iters):
        if np.abs(grad).max() < 1e-6:
            break
        step_ok = False
        while lr > 1e-12:
            trial = p - lr * grad
            try:
                t_val, t_grad = nll_grad(
                    _unpack(trial, zn.shape[1], ones, y_shift), zn, yc)
            except (NumericalError, FloatingPointError, OverflowError):
                lr *= 0.5
                continue
            if np.isfinite(t_val) and t_val < val:
                p, val, grad = trial, t_val, t_grad
                hist.append(val)
                lr = min(lr * 1.5, 1.0)
                step_ok = True
                break
            lr *= 0.5
        if not step_ok:
            break
    return p, val, hist


def relevance(model: ArdModel, tol: float = 0.05) -> RelevanceReport:
    """Normalized inverse-lengthscale weights and the kept-feature mask.

    Lengthscales are standardized by the per-feature scale recorded at fit
    time, so rescaling an input column does not reshuffle the ranking.
    """
    theta = model.lengthscales / model.feature_scales
    raw = np.exp(-(theta - theta.min()))  # shift cancels in the normalization
    weights = raw / raw.sum()
    return RelevanceReport(weights=weights, mask=weights >= tol)
