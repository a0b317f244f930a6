"""Cross-modal retrieval metrics and kernel/similarity divergence diagnostics.

Retrieval ranks a database by ascending Euclidean distance in the shared
latent space.  An item is relevant to a query when their label sets share at
least one class id.  AP over the full ranked database is averaged into mAP
per direction; precision-recall curves use 11-point interpolated precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DataError, NumericalError
from .kernels import latent_similarity, rbf_kernel, safe_cholesky, squared_distances

RECALL_LEVELS = np.linspace(0.0, 1.0, 11)


@dataclass
class RankedRetrieval:
    """One query's database ordering (ascending distance, ties by index)."""

    query_index: int
    ranking: np.ndarray
    relevance: np.ndarray


def relevance(query_labels: set[int], item_labels: set[int]) -> int:
    """1 iff the label sets intersect (single- and multi-label rule)."""
    if not query_labels or not item_labels:
        raise DataError("empty label set")
    return 1 if query_labels & item_labels else 0


def rank_by_distance(query_latents: np.ndarray, db_latents: np.ndarray) -> list[np.ndarray]:
    """Per-query database permutation by ascending Euclidean distance.

    Ties break toward the lower database index (stable sort on distance).
    """
    query_latents = np.atleast_2d(np.asarray(query_latents, dtype=float))
    db_latents = np.atleast_2d(np.asarray(db_latents, dtype=float))
    if query_latents.shape[1] != db_latents.shape[1]:
        raise DataError("query and database latent dimensions disagree")
    d2 = squared_distances(query_latents, db_latents)
    return [np.argsort(row, kind="stable") for row in d2]


def average_precision(relevance_by_rank) -> float:
    """AP = (1/T) sum_r p(r) rel(r); 0 by convention when nothing is relevant."""
    rel = np.asarray(relevance_by_rank, dtype=float)
    if rel.size == 0:
        raise DataError("empty ranking")
    total = int(rel.sum())
    if total == 0:
        return 0.0
    # plain left-to-right accumulation so the value is bit-identical to the
    # definitional formula regardless of vectorized summation order
    acc = 0.0
    hits = 0
    for rank, flag in enumerate(rel, start=1):
        if flag:
            hits += 1
            acc += hits / rank
    return acc / total


def mean_ap(retrievals: list[RankedRetrieval]) -> float:
    if not retrievals:
        raise DataError("no queries to average")
    return float(np.mean([average_precision(r.relevance) for r in retrievals]))


def retrievals_for(
    query_latents, db_latents, query_labels, db_labels
) -> list[RankedRetrieval]:
    rankings = rank_by_distance(query_latents, db_latents)
    out = []
    for qi, ranking in enumerate(rankings):
        rel = np.array(
            [relevance(query_labels[qi], db_labels[j]) for j in ranking], dtype=float
        )
        out.append(RankedRetrieval(query_index=qi, ranking=ranking, relevance=rel))
    return out


def precision_recall(retrievals: list[RankedRetrieval]) -> np.ndarray:
    """11-point interpolated precision averaged across queries.

    Returns an array of (recall_level, mean_interpolated_precision) rows.
    Queries with zero relevant items contribute zero precision at all levels.
    """
    if not retrievals:
        raise DataError("no queries")
    curves = []
    for r in retrievals:
        rel = r.relevance
        total = rel.sum()
        if total == 0:
            curves.append(np.zeros_like(RECALL_LEVELS))
            continue
        ranks = np.arange(1, rel.size + 1)
        prec = np.cumsum(rel) / ranks
        rec = np.cumsum(rel) / total
        interp = np.empty_like(RECALL_LEVELS)
        for i, level in enumerate(RECALL_LEVELS):
            mask = rec >= level - 1e-12
            interp[i] = prec[mask].max() if mask.any() else 0.0
        curves.append(interp)
    mean_curve = np.mean(curves, axis=0)
    return np.column_stack([RECALL_LEVELS, mean_curve])


@dataclass
class MetricReport:
    """Both retrieval directions plus their average and PR curves."""

    map_i2t: float
    map_t2i: float
    per_query_ap_i2t: list[float] = field(default_factory=list)
    per_query_ap_t2i: list[float] = field(default_factory=list)
    pr_i2t: np.ndarray | None = None
    pr_t2i: np.ndarray | None = None

    @property
    def map_average(self) -> float:
        return 0.5 * (self.map_i2t + self.map_t2i)

    def to_dict(self) -> dict:
        return {
            "map_i2t": self.map_i2t,
            "map_t2i": self.map_t2i,
            "map_average": self.map_average,
        }


def cross_modal_report(latents_1, latents_2, labels) -> MetricReport:
    """Full two-direction retrieval evaluation for paired test embeddings."""
    r_i2t = retrievals_for(latents_1, latents_2, labels, labels)
    r_t2i = retrievals_for(latents_2, latents_1, labels, labels)
    return MetricReport(
        map_i2t=mean_ap(r_i2t),
        map_t2i=mean_ap(r_t2i),
        per_query_ap_i2t=[average_precision(r.relevance) for r in r_i2t],
        per_query_ap_t2i=[average_precision(r.relevance) for r in r_t2i],
        pr_i2t=precision_recall(r_i2t),
        pr_t2i=precision_recall(r_t2i),
    )


def riemannian_distance(a: np.ndarray, b: np.ndarray) -> float:
    """sqrt(sum_i ln^2 lambda_i) over generalized eigenvalues of the pencil (A, B)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"need two equal-size square matrices, got {a.shape} and {b.shape}")
    for name, m in (("first", a), ("second", b)):
        if not np.allclose(m, m.T, rtol=1e-8, atol=1e-10):
            raise DataError(f"{name} matrix is not symmetric")
    try:
        eigs = scipy.linalg.eigh(a, b, eigvals_only=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"generalized eigenvalue problem failed: {exc}") from exc
    if np.any(eigs <= 0):
        raise NumericalError("matrix pencil has non-positive eigenvalues (inputs not PD)")
    return float(np.sqrt(np.sum(np.log(eigs) ** 2)))


@dataclass
class DivergenceReport:
    """Kernel-vs-latent-similarity diagnostics for a trained model."""

    riemannian: list[float]
    total: float
    abs_diff: list[np.ndarray]
    kernel_diagonals: list[float]
    similarity_diagonal: float = 1.0
    jitters: list[float] = field(default_factory=list)


def divergence_report(model) -> DivergenceReport:
    """Rebuild K_c and S^x from a trained model and measure their divergence."""
    sx = latent_similarity(model.x, model.cfg.gamma_x)
    _, sx_jit = safe_cholesky(sx)
    sx_j = sx + sx_jit * np.eye(sx.shape[0])
    distances, diffs, diags, jitters = [], [], [], [sx_jit]
    for h in model.thetas:
        k = rbf_kernel(model.x, h)
        _, k_jit = safe_cholesky(k)
        k_j = k + k_jit * np.eye(k.shape[0])
        jitters.append(k_jit)
        distances.append(riemannian_distance(k_j, sx_j))
        diffs.append(np.abs(k - sx))
        diags.append(h.signal_variance + h.bias_variance + h.noise_variance)
    return DivergenceReport(
        riemannian=distances,
        total=float(sum(distances)),
        abs_diff=diffs,
        kernel_diagonals=diags,
        jitters=jitters,
    )
