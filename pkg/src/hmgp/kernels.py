"""GP covariance and exponential-family similarity matrices with analytic partials.

The covariance is an RBF kernel perturbed by a constant bias and additive
white noise:

    K_ij = sf2 * exp(-||x_i - x_j||^2 / (2 l^2)) + sb2 + sn2 * [i == j]

All hyperparameters live in log space so gradient-based optimization stays
unconstrained while the exponentiated values remain strictly positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, LinAlgError

from .errors import DataError, NumericalError


@dataclass(frozen=True)
class RbfHyperparams:
    """Log-parameterized kernel hyperparameters for one modality."""

    log_signal_variance: float = 0.0
    log_lengthscale: float = 0.0
    log_bias_variance: float = 0.0
    log_noise_variance: float = 0.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not math.isfinite(v):
                raise DataError(f"non-finite hyperparameter {name} = {v}")

    @property
    def signal_variance(self) -> float:
        return math.exp(self.log_signal_variance)

    @property
    def lengthscale(self) -> float:
        return math.exp(self.log_lengthscale)

    @property
    def bias_variance(self) -> float:
        return math.exp(self.log_bias_variance)

    @property
    def noise_variance(self) -> float:
        return math.exp(self.log_noise_variance)

    def to_vector(self) -> np.ndarray:
        return np.array(
            [
                self.log_signal_variance,
                self.log_lengthscale,
                self.log_bias_variance,
                self.log_noise_variance,
            ]
        )

    @classmethod
    def from_vector(cls, v) -> "RbfHyperparams":
        v = np.asarray(v, dtype=float)
        if v.shape != (4,):
            raise DataError(f"hyperparameter vector must have 4 entries, got shape {v.shape}")
        return cls(*v.tolist())


N_HYPERS = 4


def squared_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows, clipped at zero.

    Self-distances are exactly zero (the expanded form leaves last-ulp
    residue on the diagonal otherwise), so similarity and kernel diagonals
    come out exact.
    """
    self_pairs = b is None
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = a if self_pairs else np.atleast_2d(np.asarray(b, dtype=float))
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)
    if self_pairs:
        np.fill_diagonal(d2, 0.0)
    return d2


def rbf_part(x: np.ndarray, h: RbfHyperparams, z: np.ndarray | None = None) -> np.ndarray:
    """The pure RBF component sf2 * exp(-d^2 / (2 l^2)), no bias or noise."""
    d2 = squared_distances(x, z)
    # overflow at absurd trial hyperparameters yields inf entries, which the
    # finite checks downstream turn into a rejected optimizer step
    with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
        return h.signal_variance * np.exp(-d2 / (2.0 * h.lengthscale**2))


def rbf_kernel(x: np.ndarray, h: RbfHyperparams) -> np.ndarray:
    """Full covariance matrix on latent positions x (N x q)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite latent positions")
    k = rbf_part(x, h) + h.bias_variance
    k[np.diag_indices_from(k)] += h.noise_variance
    return k


def rbf_kernel_grads(x: np.ndarray, h: RbfHyperparams):
    """Per-entry partial derivatives of the covariance matrix.

    Returns (dk_dx, dk_dtheta) where dk_dx[i, j] = dK_ij / dx_i (an
    N x N x q array; dK_ij / dx_j is its negation by symmetry) and
    dk_dtheta is a 4 x N x N array ordered as the log-hyperparameter vector.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    d2 = squared_distances(x)
    ell2 = h.lengthscale**2
    krbf = h.signal_variance * np.exp(-d2 / (2.0 * ell2))

    diff = x[:, None, :] - x[None, :, :]
    dk_dx = -(krbf / ell2)[:, :, None] * diff

    dk_dtheta = np.empty((N_HYPERS, n, n))
    dk_dtheta[0] = krbf
    dk_dtheta[1] = krbf * d2 / ell2
    dk_dtheta[2] = np.full((n, n), h.bias_variance)
    dk_dtheta[3] = h.noise_variance * np.eye(n)
    return dk_dx, dk_dtheta


def rbf_chain_to_latent(g: np.ndarray, x: np.ndarray, h: RbfHyperparams) -> np.ndarray:
    """Chain an outer sensitivity dL/dK (N x N) through the kernel to dL/dX."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    krbf = rbf_part(x, h)
    a = (g + g.T) * krbf / h.lengthscale**2
    return a @ x - a.sum(axis=1)[:, None] * x


def rbf_chain_to_hypers(g: np.ndarray, x: np.ndarray, h: RbfHyperparams) -> np.ndarray:
    """Chain dL/dK through the kernel to the 4 log-hyperparameter gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d2 = squared_distances(x)
    ell2 = h.lengthscale**2
    krbf = h.signal_variance * np.exp(-d2 / (2.0 * ell2))
    return np.array(
        [
            np.sum(g * krbf),
            np.sum(g * krbf * d2) / ell2,
            h.bias_variance * np.sum(g),
            h.noise_variance * np.trace(g),
        ]
    )


def feature_similarity(y: np.ndarray, gamma: float, z: np.ndarray | None = None) -> np.ndarray:
    """Exponential-family similarity on observed features: exp(-d^2 / (2 gamma))."""
    if gamma <= 0:
        raise DataError(f"similarity bandwidth must be > 0, got {gamma}")
    return np.exp(-squared_distances(y, z) / (2.0 * gamma))


def latent_similarity(x: np.ndarray, gamma_x: float = 1.0) -> np.ndarray:
    """Similarity on latent positions, Euclidean distance with bandwidth gamma_x."""
    if gamma_x <= 0:
        raise DataError(f"latent bandwidth must be > 0, got {gamma_x}")
    return np.exp(-squared_distances(x) / (2.0 * gamma_x))


def latent_similarity_grad(x: np.ndarray, gamma_x: float = 1.0) -> np.ndarray:
    """Per-entry partials: result[i, j] = dS_ij / dx_i = -S_ij (x_i - x_j) / gamma_x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = latent_similarity(x, gamma_x)
    diff = x[:, None, :] - x[None, :, :]
    return -(s / gamma_x)[:, :, None] * diff


def latent_similarity_chain(g: np.ndarray, x: np.ndarray, gamma_x: float = 1.0) -> np.ndarray:
    """Chain an outer sensitivity dL/dS (N x N) to dL/dX."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s = latent_similarity(x, gamma_x)
    b = (g + g.T) * s / gamma_x
    return b @ x - b.sum(axis=1)[:, None] * x


def median_bandwidth(y: np.ndarray) -> float:
    """Median heuristic: median of off-diagonal pairwise squared distances."""
    d2 = squared_distances(y)
    n = d2.shape[0]
    off = d2[~np.eye(n, dtype=bool)]
    med = float(np.median(off))
    return med if med > 0 else 1.0


def safe_cholesky(k: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with geometrically escalating jitter.

    Jitter starts at 1e-10 of the mean diagonal and grows tenfold up to
    1e-4 of the mean diagonal.  Returns (L, jitter_used); raises
    NumericalError if the matrix stays indefinite at max jitter or its
    diagonal is so large that the jitter scale overflows.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DataError(f"expected a square matrix, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise DataError("non-finite entries in kernel matrix")
    if not np.allclose(k, k.T, rtol=1e-10, atol=1e-12):
        raise DataError("kernel matrix is not symmetric")

    with np.errstate(over="ignore"):
        mean_diag = float(np.mean(np.diag(k)))
    if not np.isfinite(mean_diag):
        raise NumericalError("kernel diagonal overflows; matrix scale is unusable")
    scale = mean_diag if mean_diag > 0 else 1.0
    jitter = 0.0
    for _ in range(8):
        try:
            l = cholesky(k + jitter * np.eye(k.shape[0]) if jitter else k, lower=True)
            return l, jitter
        except LinAlgError:
            jitter = 1e-10 * scale if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-4 * scale:
                break
    raise NumericalError(
        f"Cholesky failed even with jitter {1e-4 * scale:.3e} (singular kernel)"
    )
