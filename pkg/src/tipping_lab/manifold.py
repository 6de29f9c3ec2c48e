"""Diffusion-map embeddings of coarse snapshots and harmonic-eigenvector tests.

The embedding follows the density-normalized construction: Gaussian affinity,
two-sided degree normalization, then the row-stochastic operator, solved
through its symmetric conjugate for stability.  Eigenvectors beyond the first
are checked for functional dependence on the earlier ones by leave-one-out
locally weighted linear regression; small residuals mark harmonics that carry
no new coordinate.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import NumericalError


@dataclass
class DmapsConfig:
    epsilon: float
    n_eigen: int = 10
    knn: int = 0  # 0 -> max(10, m // 20) at call time

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("kernel scale must be positive")
        if self.n_eigen < 1:
            raise ValueError("need at least one eigenpair")
        if self.knn and self.knn < self.n_eigen + 2:
            raise ValueError("knn must be at least n_eigen + 2")


@dataclass
class Embedding:
    eigenvalues: np.ndarray  # descending, trivial pair excluded
    eigenvectors: np.ndarray  # (m, n_eigen), unit-norm columns
    epsilon_used: float
    residuals: Optional[np.ndarray] = None


def _pairwise_sq(data, other=None):
    other = data if other is None else other
    sq = (data**2).sum(axis=1)[:, None] + (other**2).sum(axis=1)[None, :] \
        - 2.0 * data @ other.T
    np.maximum(sq, 0.0, out=sq)
    return sq


def epsilon_heuristic(data) -> float:
    """Median pairwise squared distance, subsampled to at most 2000 points."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    m = data.shape[0]
    if m < 2:
        raise ValueError("need at least two points")
    if m > 2000:
        idx = np.random.default_rng(0).choice(m, 2000, replace=False)
        data = data[idx]
        m = 2000
    sq = _pairwise_sq(data)
    vals = sq[np.triu_indices(m, k=1)]
    med = float(np.median(vals))
    if med == 0.0:
        raise ValueError("all points identical; no usable kernel scale")
    return med


def transition_matrix(data, epsilon: float):
    """Row-stochastic diffusion operator (dense); mainly a diagnostic."""
    w_t, d = _normalized_kernel(np.atleast_2d(np.asarray(data, float)), epsilon)
    return w_t / d[:, None]


def _normalized_kernel(data, epsilon):
    sq = _pairwise_sq(data)
    w = np.exp(-sq / (2.0 * epsilon))
    off = w - np.eye(w.shape[0])
    if off.max() < 1e-14:
        raise NumericalError(
            "kernel is numerically the identity; epsilon = %g is too small"
            % epsilon
        )
    p = w.sum(axis=1)
    w_t = w / np.outer(p, p)
    d = w_t.sum(axis=1)
    return w_t, d


def _fix_signs(vecs):
    for k in range(vecs.shape[1]):
        i = np.argmax(np.abs(vecs[:, k]))
        if vecs[i, k] < 0:
            vecs[:, k] = -vecs[:, k]
    return vecs


def embed(data, config: DmapsConfig) -> Embedding:
    """Leading diffusion-map coordinates of the data rows.

    The stochastic operator is solved via its symmetric conjugate
    S = D^{1/2} A D^{-1/2}; the trivial unit eigenpair is discarded.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    m = data.shape[0]
    if m < 10:
        raise ValueError("need at least 10 points to embed")
    if config.n_eigen + 1 >= m:
        raise ValueError("more eigenpairs requested than data supports")
    w_t, d = _normalized_kernel(data, config.epsilon)
    rd = np.sqrt(d)
    sym = w_t / np.outer(rd, rd)
    sym = 0.5 * (sym + sym.T)  # kill rounding asymmetry before the eigensolve
    k = config.n_eigen + 1
    if m > 1500:
        v0 = np.ones(m) / np.sqrt(m)
        vals, vecs = scipy.sparse.linalg.eigsh(sym, k=k, which="LA", v0=v0)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
    else:
        vals, vecs = scipy.linalg.eigh(sym, subset_by_index=(m - k, m - 1))
        vals, vecs = vals[::-1], vecs[:, ::-1]
    # index 0 is the trivial stochastic pair (lambda = 1, constant after
    # conjugation); keep the rest
    psi = vecs[:, 1:] / rd[:, None]
    psi /= np.linalg.norm(psi, axis=0)
    psi = _fix_signs(psi)
    return Embedding(
        eigenvalues=vals[1:].copy(),
        eigenvectors=psi,
        epsilon_used=float(config.epsilon),
    )


def harmonic_residuals(embedding: Embedding, config: DmapsConfig):
    """Leave-one-out local-linear prediction error of each eigenvector.

    psi_k is regressed on (psi_1 .. psi_{k-1}) over each point's knn
    neighborhood with Gaussian weights; r_k near zero means psi_k is a
    function of the earlier coordinates (a harmonic), near one means it
    carries a new direction.  r_1 is 1 by convention.
    """
    psi = embedding.eigenvectors
    m, n_eig = psi.shape
    if n_eig < 2:
        raise ValueError("need at least two eigenvectors")
    knn = config.knn if config.knn else max(10, m // 20)
    knn = min(knn, m - 1)
    res = np.ones(n_eig)
    for k in range(1, n_eig):
        pred = psi[:, :k]
        target = psi[:, k]
        sq = _pairwise_sq(pred)
        np.fill_diagonal(sq, np.inf)  # leave-one-out
        hat = np.empty(m)
        for i in range(m):
            nb = np.argpartition(sq[i], knn)[:knn]
            d2 = sq[i, nb]
            scale = np.sqrt(np.median(d2))
            wgt = np.exp(-d2 / max(scale**2, 1e-300))
            x = np.column_stack([np.ones(knn), pred[nb]])
            xw = x * wgt[:, None]
            lhs = xw.T @ x + 1e-8 * np.eye(k + 1)
            beta = np.linalg.solve(lhs, xw.T @ target[nb])
            hat[i] = beta[0] + pred[i] @ beta[1:]
        res[k] = np.linalg.norm(target - hat) / np.linalg.norm(target)
    embedding.residuals = res
    return res
