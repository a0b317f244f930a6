"""Training orchestration and MAP inference for unseen observations.

Training initializes the shared latent space (two-view CCA by default),
then alternates active-set rotations of scaled-conjugate-gradient descent on
the variant objective.  Inference optimizes a single query's latent position
against the trained model with all model parameters held fixed.
"""

from __future__ import annotations

import io
import json
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .config import (
    ModelConfig,
    SemanticConstraints,
    config_from_dict,
    has_semantic_terms,
    is_harmonized,
    is_similarity_based,
)
from .dataio import MTXB_MAGIC, DatasetBundle, _HEADER, _validate_matrix, atomic_write_bytes
from .errors import ConfigError, DataError, NumericalError
from .kernels import (
    RbfHyperparams,
    feature_similarity,
    median_bandwidth,
    rbf_kernel,
    rbf_part,
    safe_cholesky,
    squared_distances,
)
from .objectives import ObjectiveData, model_gradient, model_objective, pack_params, unpack_params
from .optimizer import (
    OptimTrace,
    restrict_pairs,
    restrict_rows,
    restrict_square,
    scg_minimize,
    select_active_set,
)


def cca_initialize(y1: np.ndarray, y2: np.ndarray, q: int, ridge: float = 1e-6):
    """Regularized two-view CCA initialization of the shared latent space.

    Returns (X, correlations): the mean of the two whitened canonical
    projections onto the top-q directions, plus the canonical correlations.
    Column signs are fixed by making each column's largest-magnitude entry
    positive.
    """
    y1 = _validate_matrix(y1, "view 1")
    y2 = _validate_matrix(y2, "view 2")
    n = y1.shape[0]
    if y2.shape[0] != n:
        raise DataError("views must have the same number of rows")
    if q > min(y1.shape[1], y2.shape[1]):
        raise DataError(f"q = {q} exceeds the smaller view dimension")
    if n <= q:
        raise DataError(f"need more than q = {q} observations, got {n}")

    y1c = y1 - y1.mean(axis=0)
    y2c = y2 - y2.mean(axis=0)
    c11 = y1c.T @ y1c / n + ridge * np.eye(y1.shape[1])
    c22 = y2c.T @ y2c / n + ridge * np.eye(y2.shape[1])
    c12 = y1c.T @ y2c / n

    def inv_sqrt(c):
        w, v = np.linalg.eigh(c)
        w = np.maximum(w, ridge)
        return v @ np.diag(1.0 / np.sqrt(w)) @ v.T

    r1 = inv_sqrt(c11)
    r2 = inv_sqrt(c22)
    u, corr, vt = np.linalg.svd(r1 @ c12 @ r2)
    w1 = r1 @ u[:, :q]
    w2 = r2 @ vt[:q].T

    x = 0.5 * (y1c @ w1 + y2c @ w2)
    for col in range(q):
        peak = np.argmax(np.abs(x[:, col]))
        if x[peak, col] < 0:
            x[:, col] = -x[:, col]
    return x, corr[:q]


def pca_initialize(y: np.ndarray, q: int) -> np.ndarray:
    yc = y - y.mean(axis=0)
    u, s, _ = np.linalg.svd(yc, full_matrices=False)
    x = u[:, :q] * s[:q] / np.sqrt(y.shape[0])
    for col in range(x.shape[1]):
        peak = np.argmax(np.abs(x[:, col]))
        if x[peak, col] < 0:
            x[:, col] = -x[:, col]
    return x


def initialize_latent(cfg: ModelConfig, y_train: list[np.ndarray]) -> np.ndarray:
    if cfg.init == "cca":
        x, _ = cca_initialize(y_train[0], y_train[1], cfg.q)
        return x
    if cfg.init == "pca":
        return pca_initialize(np.hstack(y_train), cfg.q)
    rng = np.random.default_rng(cfg.seed)
    return 0.1 * rng.standard_normal((y_train[0].shape[0], cfg.q))


def derive_constraints(labels, cfg: ModelConfig) -> SemanticConstraints:
    """Sample similar/dissimilar index pairs from object labels.

    Similar pairs share at least one label; dissimilar pairs share none.
    Up to cfg.pair_budget pairs of each kind are drawn without replacement,
    seeded by cfg.seed.
    """
    n = len(labels)
    rng = np.random.default_rng((cfg.seed, 0xC0))
    similar, dissimilar = [], []
    for i in range(n):
        for j in range(i + 1, n):
            (similar if labels[i] & labels[j] else dissimilar).append((i, j))
    if not similar or not dissimilar:
        raise DataError("labels give an empty similar or dissimilar pair set")

    def sample(pairs):
        if len(pairs) <= cfg.pair_budget:
            return tuple(pairs)
        idx = rng.choice(len(pairs), size=cfg.pair_budget, replace=False)
        return tuple(pairs[i] for i in np.sort(idx))

    return SemanticConstraints(
        similar_pairs=sample(similar),
        dissimilar_pairs=sample(dissimilar),
        lambda_similar=cfg.lambda_similar,
        lambda_dissimilar=cfg.lambda_dissimilar,
    )


@dataclass
class TrainTrace:
    """Concatenated per-rotation SCG traces with epoch timings."""

    segments: list[tuple[int, int, OptimTrace]] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    initial_objective: float = float("nan")
    final_objective: float = float("nan")

    def objectives(self) -> np.ndarray:
        return np.concatenate(
            [np.asarray(t.objectives) for _, _, t in self.segments]
            or [np.zeros(0)]
        )

    def to_csv(self) -> str:
        lines = ["epoch,rotation,iteration,objective,gradnorm,accepted"]
        for epoch, rotation, t in self.segments:
            for i, (o, g, a) in enumerate(zip(t.objectives, t.gradnorms, t.accepted)):
                lines.append(f"{epoch},{rotation},{i},{o!r},{g!r},{int(a)}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainedModel:
    """Learned latent positions and hyperparameters plus inference references."""

    cfg: ModelConfig
    x: np.ndarray
    thetas: list[RbfHyperparams]
    y_train: list[np.ndarray]
    gamma_features: tuple[float, ...]
    active_indices: np.ndarray
    train_indices: np.ndarray
    jitters: list[float]

    @property
    def n_modalities(self) -> int:
        return len(self.y_train)


def _training_matrices(cfg: ModelConfig, y_train: list[np.ndarray]):
    """Per-modality data matrices for the likelihood plus the gammas used."""
    if cfg.gamma_features is not None:
        gammas = cfg.gamma_features
    else:
        gammas = tuple(median_bandwidth(y) for y in y_train)
    if is_similarity_based(cfg.variant):
        data = [feature_similarity(y, g) for y, g in zip(y_train, gammas)]
    else:
        data = list(y_train)
    return data, gammas


def _guarded(fn):
    """Objective wrapper: numerical blowups at trial points become +inf.

    SCG then rejects the step and shrinks the trust region instead of dying.
    """

    def wrapped(p):
        try:
            return fn(p)
        except (NumericalError, DataError, OverflowError, FloatingPointError):
            return np.inf

    return wrapped


def train(bundle: DatasetBundle, cfg: ModelConfig) -> tuple[TrainedModel, TrainTrace]:
    """Learn latent positions and kernel hyperparameters for one config."""
    train_idx = bundle.split.train
    if train_idx.size < 2:
        raise DataError("training split must contain at least two objects")
    y_train = [restrict_rows(y, train_idx) for y in bundle.modalities]
    n = train_idx.size
    if cfg.M > n:
        raise ConfigError(f"active-set size M = {cfg.M} exceeds {n} training objects")

    semantic = cfg.semantic
    if has_semantic_terms(cfg.variant) and semantic is None:
        if bundle.labels is None:
            raise DataError(
                f"variant {cfg.variant} needs labels or explicit constraint pairs"
            )
        labels_train = [bundle.labels[i] for i in train_idx]
        semantic = derive_constraints(labels_train, cfg)
    if semantic is not None:
        semantic.validate_range(n)

    data_matrices, gammas = _training_matrices(cfg, y_train)

    x = initialize_latent(cfg, y_train)
    thetas = [
        RbfHyperparams(0.0, 0.0, 0.0, float(np.log(0.01)))
        for _ in range(bundle.n_modalities)
    ]

    full_data = ObjectiveData.from_config(cfg, data_matrices, semantic=semantic)
    trace = TrainTrace()
    trace.initial_objective = model_objective(pack_params(x, thetas), full_data).total

    rotations = int(np.ceil(n / cfg.M))
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        for rotation in range(rotations):
            rot_seed = np.random.default_rng((cfg.seed, epoch, rotation)).integers(2**31)
            active = select_active_set(
                n, cfg.M, policy=cfg.active_policy, seed=int(rot_seed), coords=x
            )
            sub = [
                restrict_square(m, active) if is_similarity_based(cfg.variant) else restrict_rows(m, active)
                for m in data_matrices
            ]
            sub_sem = None
            if semantic is not None:
                sub_sem = SemanticConstraints(
                    similar_pairs=restrict_pairs(semantic.similar_pairs, active),
                    dissimilar_pairs=restrict_pairs(semantic.dissimilar_pairs, active),
                    lambda_similar=semantic.lambda_similar,
                    lambda_dissimilar=semantic.lambda_dissimilar,
                )
            sub_data = ObjectiveData.from_config(cfg, sub, semantic=sub_sem)
            params0 = pack_params(x[active], thetas)
            x_new, seg = scg_minimize(
                _guarded(lambda p: model_objective(p, sub_data).total),
                lambda p: model_gradient(p, sub_data),
                params0,
                cfg.optim_options(),
            )
            x_act, thetas = unpack_params(x_new, active.size, cfg.q, bundle.n_modalities)
            x[active] = x_act
            trace.segments.append((epoch, rotation, seg))
        trace.epoch_seconds.append(time.perf_counter() - tic)

    trace.final_objective = model_objective(pack_params(x, thetas), full_data).total

    jitters = []
    for h in thetas:
        _, jit = safe_cholesky(rbf_kernel(x, h))
        jitters.append(jit)

    inference_active = select_active_set(
        n, cfg.M, policy=cfg.active_policy, seed=cfg.seed, coords=x
    )
    model = TrainedModel(
        cfg=cfg,
        x=x,
        thetas=thetas,
        y_train=y_train,
        gamma_features=tuple(gammas),
        active_indices=inference_active,
        train_indices=np.asarray(train_idx),
        jitters=jitters,
    )
    return model, trace


class _PredictiveObjective:
    """Conditional GP negative log predictive density of one query observation."""

    def __init__(self, model: TrainedModel, modality: int, y_t: np.ndarray):
        cfg = model.cfg
        idx = (
            np.arange(model.x.shape[0])
            if cfg.infer_full_set
            else model.active_indices
        )
        self.h = model.thetas[modality]
        self.x_ref = model.x[idx]
        y_ref = model.y_train[modality][idx]
        if is_similarity_based(cfg.variant):
            gamma = model.gamma_features[modality]
            self.target = feature_similarity(
                y_t[None, :], gamma, y_ref
            ).ravel()
            data = feature_similarity(y_ref, gamma)
        else:
            self.target = np.asarray(y_t, dtype=float)
            data = y_ref
        k = rbf_kernel(self.x_ref, self.h)
        self.chol, _ = safe_cholesky(k)
        self.alpha = cho_solve((self.chol, True), data)  # K^-1 D
        self.kss = self.h.signal_variance + self.h.bias_variance + self.h.noise_variance
        self.out_dim = data.shape[1]

    def _common(self, x_t):
        kstar = rbf_part(x_t[None, :], self.h, self.x_ref).ravel() + self.h.bias_variance
        w = cho_solve((self.chol, True), kstar)  # K^-1 k*
        mean = self.alpha.T @ kstar
        var = max(self.kss - float(kstar @ w), 1e-12)
        return kstar, w, mean, var

    def value(self, x_t) -> float:
        x_t = np.asarray(x_t, dtype=float)
        _, _, mean, var = self._common(x_t)
        resid = self.target - mean
        # the Gaussian latent prior keeps the query from drifting into the
        # flat far-field region where the predictive density saturates
        return (
            0.5 * self.out_dim * np.log(var)
            + 0.5 * float(resid @ resid) / var
            + 0.5 * float(x_t @ x_t)
        )

    def gradient(self, x_t) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=float)
        kstar, w, mean, var = self._common(x_t)
        resid = self.target - mean
        # dk*_i/dx = -k_rbf_i (x - x_i) / l^2
        krbf = rbf_part(x_t[None, :], self.h, self.x_ref).ravel()
        dk = -(krbf / self.h.lengthscale**2)[:, None] * (x_t[None, :] - self.x_ref)
        dvar = -2.0 * (w @ dk)
        dmean_term = -(self.alpha @ (resid)) @ dk  # d(-resid @ resid / 2)/dk* path
        rss = float(resid @ resid)
        return (
            0.5 * self.out_dim * dvar / var
            + dmean_term / var
            - 0.5 * rss * dvar / var**2
            + x_t
        )


def infer_latent(y_t: np.ndarray, model: TrainedModel, modality: int) -> np.ndarray:
    """MAP latent position for one observation of the given modality (0-based)."""
    y_t = np.asarray(y_t, dtype=float).ravel()
    expected = model.y_train[modality].shape[1]
    if y_t.size != expected:
        raise DataError(f"query has dimension {y_t.size}, modality expects {expected}")

    obj = _PredictiveObjective(model, modality, y_t)
    cfg = model.cfg

    # nearest training observations in feature space seed the optimization
    d2 = squared_distances(y_t[None, :], model.y_train[modality]).ravel()
    order = np.argsort(d2, kind="stable")
    starts = order[: cfg.inference_starts]

    best_x, best_val = None, np.inf
    opts = cfg.optim_options(max_iters=cfg.inference_iters)
    for s in starts:
        x0 = model.x[s]
        x_opt, _ = scg_minimize(_guarded(obj.value), obj.gradient, x0, opts)
        val = obj.value(x_opt)
        if val < best_val:
            best_x, best_val = x_opt, val
    return best_x


def embed_test_set(
    y_test: np.ndarray, modality: int, model: TrainedModel, threads: int = 1
) -> np.ndarray:
    """Row-wise MAP inference; rows are independent."""
    y_test = np.asarray(y_test, dtype=float)
    if y_test.size == 0:
        return np.zeros((0, model.cfg.q))
    y_test = np.atleast_2d(y_test)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda y: infer_latent(y, model, modality), y_test))
    else:
        rows = [infer_latent(y, model, modality) for y in y_test]
    return np.vstack(rows)


# --- model container serialization -------------------------------------------
#
# Layout: magic b'HMGM', uint32 metadata length, UTF-8 JSON metadata, then a
# sequence of MTXB blocks: X, theta_1..theta_C (1 x 4 each), Y^1..Y^C,
# active indices (1 x M), train indices (1 x Ntr).

MODEL_MAGIC = b"HMGM"


def _mtxb_bytes(values: np.ndarray) -> bytes:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    return _HEADER.pack(MTXB_MAGIC, values.shape[0], values.shape[1]) + np.ascontiguousarray(
        values, dtype="<f8"
    ).tobytes()


def _read_mtxb_block(fh) -> np.ndarray:
    header = fh.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise DataError("truncated model container: missing matrix header")
    magic, rows, cols = _HEADER.unpack(header)
    if magic != MTXB_MAGIC:
        raise DataError(f"bad matrix magic {magic!r} inside model container")
    payload = fh.read(rows * cols * 8)
    if len(payload) != rows * cols * 8:
        raise DataError("truncated model container: short matrix payload")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


def save_model(model: TrainedModel, path) -> None:
    meta = {
        "config": model.cfg.to_dict(),
        "n_modalities": model.n_modalities,
        "q": model.cfg.q,
        "gamma_features": list(model.gamma_features),
        "jitters": list(model.jitters),
        "seed": model.cfg.seed,
    }
    blob = io.BytesIO()
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob.write(MODEL_MAGIC)
    blob.write(struct.pack("<I", len(meta_bytes)))
    blob.write(meta_bytes)
    blob.write(_mtxb_bytes(model.x))
    for h in model.thetas:
        blob.write(_mtxb_bytes(h.to_vector()[None, :]))
    for y in model.y_train:
        blob.write(_mtxb_bytes(y))
    blob.write(_mtxb_bytes(model.active_indices[None, :].astype(float)))
    blob.write(_mtxb_bytes(model.train_indices[None, :].astype(float)))

    atomic_write_bytes(path, blob.getvalue())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise DataError(f"{path}: not a model container (magic {magic!r})")
        (meta_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        cfg = config_from_dict(meta["config"])
        x = _read_mtxb_block(fh)
        thetas = [
            RbfHyperparams.from_vector(_read_mtxb_block(fh).ravel())
            for _ in range(meta["n_modalities"])
        ]
        y_train = [_read_mtxb_block(fh) for _ in range(meta["n_modalities"])]
        active = _read_mtxb_block(fh).ravel().astype(np.intp)
        train_idx = _read_mtxb_block(fh).ravel().astype(np.intp)
    return TrainedModel(
        cfg=cfg,
        x=x,
        thetas=thetas,
        y_train=y_train,
        gamma_features=tuple(meta["gamma_features"]),
        active_indices=active,
        train_indices=train_idx,
        jitters=list(meta["jitters"]),
    )
