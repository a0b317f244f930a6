"""Matrix file formats, label files, dataset assembly and synthetic data.

Binary format "MTXB": magic b'MTXB', two little-endian uint32 (rows, cols),
then rows*cols little-endian float64 values in row-major order.  No padding.
CSV is accepted for interop: one row per line, ',' separator, no header.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .errors import DataError

MTXB_MAGIC = b"MTXB"
_HEADER = struct.Struct("<4sII")


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a sibling temp file and rename, so readers never see a torn file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _validate_matrix(values: np.ndarray, where: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DataError(f"{where}: expected a 2-D matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{where}: non-finite entry at row {bad[0]}, col {bad[1]}")
    return values


def write_matrix(values: np.ndarray, path, format: str = "binary") -> None:
    """Write a matrix in MTXB binary or CSV form."""
    values = _validate_matrix(values, str(path))
    if format == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MTXB_MAGIC, values.shape[0], values.shape[1]))
            fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    elif format == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            for row in values:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")
    else:
        raise DataError(f"unknown matrix format {format!r}; expected 'binary' or 'csv'")


def read_matrix(path, format: str = "binary") -> np.ndarray:
    """Read an MTXB binary or CSV matrix file."""
    if format == "binary":
        return _read_mtxb(path)
    if format == "csv":
        return _read_csv(path)
    raise DataError(f"unknown matrix format {format!r}; expected 'binary' or 'csv'")


def _read_mtxb(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise DataError(f"{path}: truncated header at byte {len(header)}")
        magic, rows, cols = _HEADER.unpack(header)
        if magic != MTXB_MAGIC:
            raise DataError(f"{path}: bad magic bytes {magic!r} at byte 0")
        payload = fh.read()
    expected = rows * cols * 8
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes at byte {_HEADER.size}, "
            f"expected {expected} for {rows}x{cols}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
    return _validate_matrix(values, str(path))


def _read_csv(path) -> np.ndarray:
    rows = []
    ncols = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if ncols is None:
                ncols = len(fields)
            elif len(fields) != ncols:
                raise DataError(f"{path}: line {lineno} has {len(fields)} fields, expected {ncols}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty CSV matrix")
    return _validate_matrix(np.array(rows), str(path))


def read_labels(path) -> list[set[int]]:
    """Read a labels file: one line per object, space-separated non-negative ints."""
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                raise DataError(f"{path}: line {lineno}: empty label set")
            try:
                ids = {int(tok) for tok in line.split()}
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
            if any(i < 0 for i in ids):
                raise DataError(f"{path}: line {lineno}: negative class id")
            labels.append(ids)
    if not labels:
        raise DataError(f"{path}: empty labels file")
    return labels


def write_labels(labels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ids in labels:
            fh.write(" ".join(str(i) for i in sorted(ids)))
            fh.write("\n")


@dataclass
class Split:
    """Disjoint train/test index partitions over 0..N-1."""

    train: np.ndarray
    test: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.intp)
        self.test = np.asarray(self.test, dtype=np.intp)
        combined = np.concatenate([self.train, self.test])
        if len(np.unique(combined)) != combined.size:
            raise DataError("train/test indices overlap or repeat")


@dataclass
class DatasetBundle:
    """Paired multimodal dataset: modalities, optional labels, train/test split."""

    modalities: list[np.ndarray]
    labels: list[set[int]] | None = None
    split: Split | None = None
    latent_truth: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.modalities) < 2:
            raise DataError("a dataset needs at least two modalities")
        self.modalities = [_validate_matrix(m, f"modality {c + 1}") for c, m in enumerate(self.modalities)]
        n = self.modalities[0].shape[0]
        if n < 2:
            raise DataError("a dataset needs at least two paired observations")
        for c, m in enumerate(self.modalities):
            if m.shape[0] != n:
                raise DataError(
                    f"modality {c + 1} has {m.shape[0]} rows, expected {n} (paired observations)"
                )
        if self.labels is not None:
            if len(self.labels) != n:
                raise DataError(f"labels cover {len(self.labels)} objects, expected {n}")
            for i, ids in enumerate(self.labels):
                if not ids:
                    raise DataError(f"object {i} has an empty label set")
        if self.split is not None:
            for idx in np.concatenate([self.split.train, self.split.test]):
                if idx < 0 or idx >= n:
                    raise DataError(f"split index {idx} out of range for {n} objects")
        else:
            self.split = Split(train=np.arange(n), test=np.arange(0))

    @property
    def n(self) -> int:
        return self.modalities[0].shape[0]

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)


def generate_synthetic(
    n: int,
    q: int,
    d1: int,
    d2: int,
    seed: int,
    noise: float,
    groups: int = 10,
    separation: float = 0.0,
    test_fraction: float = 0.2,
    identical_maps: bool = False,
    private_dims: int = 0,
    private_scale: float = 1.0,
) -> DatasetBundle:
    """Generate a paired two-modality dataset from a shared ground-truth latent.

    The latent Z is n x q standard normal; with separation > 0 each of the
    `groups` equally sized blocks is shifted along a random direction, which
    keeps class sizes exactly balanced.  Both modalities are smooth nonlinear
    maps of Z (random one-hidden-layer tanh networks) plus white observation
    noise; pass a (noise1, noise2) pair for asymmetric noise levels.  With
    private_dims > 0 each modality additionally depends on its own
    modality-specific latent factors (scaled by private_scale), so the two
    views share Z but disagree on the rest of their structure.  Labels come
    from the group structure when separated, otherwise from a k-means
    partition of Z.  Deterministic per seed.
    """
    if n < 4 or q < 1 or d1 < 1 or d2 < 1:
        raise DataError("degenerate synthetic dimensions: need n >= 4 and q, d1, d2 >= 1")
    if groups < 1 or groups > n:
        raise DataError("groups must be in [1, n]")
    rng = np.random.default_rng(seed)

    z = rng.standard_normal((n, q))
    if separation > 0:
        centers = rng.standard_normal((groups, q))
        centers *= separation / np.maximum(np.linalg.norm(centers, axis=1, keepdims=True), 1e-12)
        assignment = np.arange(n) % groups
        z = z + centers[assignment]
        labels = [{int(a)} for a in assignment]
    else:
        _, assignment = kmeans2(z, groups, minit="++", seed=rng)
        labels = [{int(a)} for a in assignment]

    d_in = q + private_dims

    def smooth_map(map_rng, d_out):
        hidden = max(2 * d_in, 8)
        w = map_rng.standard_normal((d_in, hidden))
        b = map_rng.standard_normal(hidden)
        u = map_rng.standard_normal((hidden, d_out)) / np.sqrt(hidden)
        return lambda x: np.tanh(x @ w + b) @ u

    f1 = smooth_map(np.random.default_rng((seed, 1)), d1)
    if identical_maps:
        if d1 != d2:
            raise DataError("identical_maps requires d1 == d2")
        f2 = smooth_map(np.random.default_rng((seed, 1)), d2)
    else:
        f2 = smooth_map(np.random.default_rng((seed, 2)), d2)

    if private_dims > 0:
        u1 = private_scale * rng.standard_normal((n, private_dims))
        u2 = private_scale * rng.standard_normal((n, private_dims))
        y1 = f1(np.hstack([z, u1]))
        y2 = f2(np.hstack([z, u2]))
    else:
        y1 = f1(z)
        y2 = f2(z)
    noise1, noise2 = (noise, noise) if np.isscalar(noise) else noise
    if noise1 > 0:
        y1 = y1 + noise1 * rng.standard_normal(y1.shape)
    if noise2 > 0:
        y2 = y2 + noise2 * rng.standard_normal(y2.shape)

    n_test = int(round(test_fraction * n))
    perm = rng.permutation(n)
    split = Split(train=np.sort(perm[n_test:]), test=np.sort(perm[:n_test]), seed=seed)
    return DatasetBundle(modalities=[y1, y2], labels=labels, split=split, latent_truth=z)
