"""Scalar objective terms and analytic gradients for all model variants.

Each variant minimizes a sum of per-modality GP negative log-likelihoods
plus optional penalties:

    mGPLVM / m-SimGP / m-RSimGP : likelihood + Gaussian latent prior
                                  (+ semantic pair terms for m-RSimGP)
    hmGPLVM / hm-SimGP / hm-RSimGP : likelihood + mu_c * H_c(K_c, S^x)
                                  (+ semantic pair terms for hm-RSimGP)

H_c is one of three agreement penalties between the modality kernel K_c and
the latent similarity S^x: squared Frobenius norm, l2,1 column-norm sum, or
the trace ratio (1/2) tr(K_c^{-1} S^x).  Additive constants are dropped from
all negative log-likelihoods; they do not move MAP optima.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular, cho_solve

from .config import (
    ModelConfig,
    SemanticConstraints,
    is_harmonized,
    is_similarity_based,
    has_semantic_terms,
)
from .errors import DataError
from .kernels import (
    N_HYPERS,
    RbfHyperparams,
    latent_similarity,
    latent_similarity_chain,
    rbf_chain_to_hypers,
    rbf_chain_to_latent,
    rbf_kernel,
    safe_cholesky,
)


@dataclass
class ObjectiveValue:
    """Total objective with a named per-term breakdown (total == sum of terms)."""

    total: float
    breakdown: dict[str, float] = field(default_factory=dict)


def nll_gplvm(y: np.ndarray, k: np.ndarray) -> float:
    """(d/2) ln|K| + (1/2) tr(K^-1 Y Y^T), constants dropped."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    l, _ = safe_cholesky(k)
    logdet = 2.0 * np.sum(np.log(np.diag(l)))
    alpha = solve_triangular(l, y, lower=True)
    return 0.5 * y.shape[1] * logdet + 0.5 * float(np.sum(alpha * alpha))


def nll_simgp(s: np.ndarray, k: np.ndarray) -> float:
    """(N/2) ln|K| + (1/2) tr(K^-1 S S^T), constants dropped."""
    s = np.asarray(s, dtype=float)
    if s.shape[0] != k.shape[0]:
        raise DataError("similarity and kernel sizes disagree")
    return nll_gplvm(s, k)


def _fit_outer_grad(data: np.ndarray, kinv: np.ndarray, out_dim: int) -> np.ndarray:
    """dL/dK for the generic fit term (m/2) ln|K| + (1/2) tr(K^-1 D D^T)."""
    w = kinv @ data
    return 0.5 * out_dim * kinv - 0.5 * (w @ w.T)


def harmonization_loss(k: np.ndarray, sx: np.ndarray, kind: str) -> float:
    """Agreement penalty between a kernel matrix and the latent similarity."""
    k = np.asarray(k, dtype=float)
    sx = np.asarray(sx, dtype=float)
    if k.shape != sx.shape:
        raise DataError(f"size mismatch: kernel {k.shape} vs similarity {sx.shape}")
    if kind == "fnorm":
        d = k - sx
        return float(np.sum(d * d))
    if kind == "l21":
        d = k - sx
        return float(np.sum(np.linalg.norm(d, axis=0)))
    if kind == "trace":
        l, _ = safe_cholesky(k)
        return 0.5 * float(np.trace(cho_solve((l, True), sx)))
    raise DataError(f"unknown harmonization kind {kind!r}")


def harmonization_outer_grads(k, sx, kind) -> tuple[np.ndarray, np.ndarray]:
    """Outer sensitivities (dH/dK, dH/dS^x) of the agreement penalty.

    The l2,1 kind uses the zero subgradient for zero-norm columns.
    """
    k = np.asarray(k, dtype=float)
    sx = np.asarray(sx, dtype=float)
    if k.shape != sx.shape:
        raise DataError(f"size mismatch: kernel {k.shape} vs similarity {sx.shape}")
    if kind == "fnorm":
        g = 2.0 * (k - sx)
        return g, -g
    if kind == "l21":
        d = k - sx
        norms = np.linalg.norm(d, axis=0)
        inv = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
        g = d * inv[None, :]
        return g, -g
    if kind == "trace":
        l, _ = safe_cholesky(k)
        kinv_sx = cho_solve((l, True), sx)
        kinv = cho_solve((l, True), np.eye(k.shape[0]))
        return -0.5 * (kinv_sx @ kinv), 0.5 * kinv
    raise DataError(f"unknown harmonization kind {kind!r}")


def harmonization_grad(
    k: np.ndarray,
    sx: np.ndarray,
    kind: str,
    x: np.ndarray,
    h: RbfHyperparams,
    gamma_x: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Full gradient of the penalty through both the kernel and S^x paths.

    Returns (dH/dX, dH/dtheta) with the latent-similarity dependence on X
    included.
    """
    dh_dk, dh_dsx = harmonization_outer_grads(k, sx, kind)
    gx = rbf_chain_to_latent(dh_dk, x, h) + latent_similarity_chain(dh_dsx, x, gamma_x)
    gtheta = rbf_chain_to_hypers(dh_dk, x, h)
    return gx, gtheta


def semantic_penalty(x: np.ndarray, c: SemanticConstraints) -> tuple[float, float]:
    """(similar term, dissimilar hinge term) of the pairwise semantic prior."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    sim = 0.0
    if c.similar_pairs:
        i, j = np.array(c.similar_pairs).T
        sim = float(np.sum((x[i] - x[j]) ** 2))
    dis = 0.0
    if c.dissimilar_pairs:
        i, j = np.array(c.dissimilar_pairs).T
        d2 = np.sum((x[i] - x[j]) ** 2, axis=1)
        dis = float(np.sum(np.maximum(0.0, 1.0 - d2)))
    return c.lambda_similar * sim, c.lambda_dissimilar * dis


def semantic_grad(x: np.ndarray, c: SemanticConstraints) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = np.zeros_like(x)
    if c.similar_pairs and c.lambda_similar > 0:
        i, j = np.array(c.similar_pairs).T
        diff = 2.0 * c.lambda_similar * (x[i] - x[j])
        np.add.at(g, i, diff)
        np.add.at(g, j, -diff)
    if c.dissimilar_pairs and c.lambda_dissimilar > 0:
        i, j = np.array(c.dissimilar_pairs).T
        diff = x[i] - x[j]
        active = np.sum(diff * diff, axis=1) < 1.0
        diff = -2.0 * c.lambda_dissimilar * diff * active[:, None]
        np.add.at(g, i, diff)
        np.add.at(g, j, -diff)
    return g


def gaussian_latent_prior(x: np.ndarray) -> float:
    """(1/2) ||X||_F^2: negative log of a standard normal prior per latent point."""
    x = np.asarray(x, dtype=float)
    return 0.5 * float(np.sum(x * x))


def pack_params(x: np.ndarray, thetas: list[RbfHyperparams]) -> np.ndarray:
    parts = [np.asarray(x, dtype=float).ravel()]
    parts.extend(h.to_vector() for h in thetas)
    return np.concatenate(parts)


def unpack_params(params: np.ndarray, n: int, q: int, n_modalities: int):
    params = np.asarray(params, dtype=float)
    expected = n * q + N_HYPERS * n_modalities
    if params.size != expected:
        raise DataError(f"parameter vector has {params.size} entries, expected {expected}")
    x = params[: n * q].reshape(n, q)
    thetas = [
        RbfHyperparams.from_vector(params[n * q + c * N_HYPERS : n * q + (c + 1) * N_HYPERS])
        for c in range(n_modalities)
    ]
    return x, thetas


@dataclass
class ObjectiveData:
    """Everything model_objective needs besides the parameter vector.

    data_matrices holds Y^c for feature-likelihood variants and the fixed
    intra-modal similarity S^c for similarity-likelihood variants.
    """

    variant: str
    data_matrices: list[np.ndarray]
    mu: tuple[float, ...]
    harmonization_kind: str | None
    gamma_x: float
    semantic: SemanticConstraints | None
    include_latent_prior: bool
    q: int

    def __post_init__(self):
        self.data_matrices = [np.atleast_2d(np.asarray(m, dtype=float)) for m in self.data_matrices]
        n = self.data_matrices[0].shape[0]
        for m in self.data_matrices:
            if m.shape[0] != n:
                raise DataError("data matrices disagree on the number of objects")
        if is_harmonized(self.variant) and self.harmonization_kind is None:
            raise DataError(f"variant {self.variant} requires a harmonization kind")
        if has_semantic_terms(self.variant) and self.semantic is None:
            raise DataError(f"variant {self.variant} requires semantic constraint sets")
        if len(self.mu) < len(self.data_matrices):
            self.mu = tuple(self.mu) + (self.mu[-1],) * (len(self.data_matrices) - len(self.mu))

    @property
    def n(self) -> int:
        return self.data_matrices[0].shape[0]

    @property
    def n_modalities(self) -> int:
        return len(self.data_matrices)

    @classmethod
    def from_config(cls, cfg: ModelConfig, data_matrices, semantic=None) -> "ObjectiveData":
        return cls(
            variant=cfg.variant,
            data_matrices=list(data_matrices),
            mu=cfg.mu,
            harmonization_kind=cfg.harmonization,
            gamma_x=cfg.gamma_x,
            semantic=semantic if semantic is not None else cfg.semantic,
            include_latent_prior=cfg.include_latent_prior and not is_harmonized(cfg.variant),
            q=cfg.q,
        )


def _needs_harmonization(data: ObjectiveData) -> bool:
    # mu == 0 terms are skipped entirely so a harmonized variant at mu = 0
    # reproduces its baseline bit for bit (minus the latent prior).
    return is_harmonized(data.variant) and any(m > 0 for m in data.mu)


def model_objective(params: np.ndarray, data: ObjectiveData) -> ObjectiveValue:
    """Evaluate the full variant objective with a named term breakdown."""
    x, thetas = unpack_params(params, data.n, data.q, data.n_modalities)
    breakdown: dict[str, float] = {}
    total = 0.0

    sim_based = is_similarity_based(data.variant)
    harmonize = _needs_harmonization(data)
    sx = latent_similarity(x, data.gamma_x) if harmonize else None

    for c, (dm, h) in enumerate(zip(data.data_matrices, thetas), start=1):
        k = rbf_kernel(x, h)
        nll = nll_simgp(dm, k) if sim_based else nll_gplvm(dm, k)
        breakdown[f"nll_mod{c}"] = nll
        total += nll
        if harmonize and data.mu[c - 1] > 0:
            pen = data.mu[c - 1] * harmonization_loss(k, sx, data.harmonization_kind)
            breakdown[f"harmonization_mod{c}"] = pen
            total += pen

    if has_semantic_terms(data.variant):
        sim_term, dis_term = semantic_penalty(x, data.semantic)
        breakdown["semantic_similar"] = sim_term
        breakdown["semantic_dissimilar"] = dis_term
        total += sim_term + dis_term

    if data.include_latent_prior and not is_harmonized(data.variant):
        prior = gaussian_latent_prior(x)
        breakdown["latent_prior"] = prior
        total += prior

    return ObjectiveValue(total=total, breakdown=breakdown)


def model_gradient(params: np.ndarray, data: ObjectiveData) -> np.ndarray:
    """Analytic gradient of model_objective with respect to the packed vector."""
    x, thetas = unpack_params(params, data.n, data.q, data.n_modalities)
    n = data.n

    sim_based = is_similarity_based(data.variant)
    harmonize = _needs_harmonization(data)
    sx = latent_similarity(x, data.gamma_x) if harmonize else None

    gx = np.zeros_like(x)
    gthetas = []
    g_sx = np.zeros((n, n)) if harmonize else None

    for c, (dm, h) in enumerate(zip(data.data_matrices, thetas)):
        k = rbf_kernel(x, h)
        l, _ = safe_cholesky(k)
        kinv = cho_solve((l, True), np.eye(n))
        out_dim = n if sim_based else dm.shape[1]
        g_k = _fit_outer_grad(dm, kinv, out_dim)
        if harmonize and data.mu[c] > 0:
            dh_dk, dh_dsx = harmonization_outer_grads(k, sx, data.harmonization_kind)
            g_k = g_k + data.mu[c] * dh_dk
            g_sx += data.mu[c] * dh_dsx
        gx += rbf_chain_to_latent(g_k, x, h)
        gthetas.append(rbf_chain_to_hypers(g_k, x, h))

    if harmonize:
        gx += latent_similarity_chain(g_sx, x, data.gamma_x)

    if has_semantic_terms(data.variant):
        gx += semantic_grad(x, data.semantic)

    if data.include_latent_prior and not is_harmonized(data.variant):
        gx += x

    return np.concatenate([gx.ravel()] + gthetas)
