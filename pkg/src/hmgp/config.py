"""Experiment configuration: model variants, penalty weights, optimizer settings.

Configs are flat JSON documents with a versioned schema.  Unknown keys are
rejected by name so a typo never silently falls back to a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

from .errors import ConfigError

SCHEMA_VERSION = 1

VARIANTS = ("mGPLVM", "hmGPLVM", "m-SimGP", "hm-SimGP", "m-RSimGP", "hm-RSimGP")
HARMONIZATION_KINDS = ("fnorm", "l21", "trace")
INIT_METHODS = ("cca", "pca", "random")
ACTIVE_POLICIES = ("random", "farthest-point")

# canonical-variant lookup, case/punctuation tolerant
_VARIANT_ALIASES = {v.lower().replace("_", "-"): v for v in VARIANTS}


def normalize_variant(name: str) -> str:
    key = str(name).lower().replace("_", "-")
    if key not in _VARIANT_ALIASES:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return _VARIANT_ALIASES[key]


def is_harmonized(variant: str) -> bool:
    return variant.startswith("hm")


def is_similarity_based(variant: str) -> bool:
    return "SimGP" in variant


def has_semantic_terms(variant: str) -> bool:
    return "RSimGP" in variant


@dataclass(frozen=True)
class HarmonizationSpec:
    """Kernel/latent-similarity agreement penalty: kind plus per-modality weights."""

    kind: str
    weights: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in HARMONIZATION_KINDS:
            raise ConfigError(
                f"unknown harmonization kind {self.kind!r}; expected one of {HARMONIZATION_KINDS}"
            )
        for w in self.weights:
            if not math.isfinite(w) or w < 0:
                raise ConfigError(f"harmonization weight must be finite and >= 0, got {w}")


@dataclass(frozen=True)
class SemanticConstraints:
    """Pairwise similar/dissimilar index constraints with their tradeoff weights."""

    similar_pairs: tuple[tuple[int, int], ...]
    dissimilar_pairs: tuple[tuple[int, int], ...]
    lambda_similar: float = 1.0
    lambda_dissimilar: float = 1.0

    def __post_init__(self):
        s = {tuple(sorted(p)) for p in self.similar_pairs}
        d = {tuple(sorted(p)) for p in self.dissimilar_pairs}
        if s & d:
            raise ConfigError("similar and dissimilar pair sets overlap")
        for i, j in list(self.similar_pairs) + list(self.dissimilar_pairs):
            if i == j:
                raise ConfigError(f"self-pair ({i},{i}) not allowed")
            if i < 0 or j < 0:
                raise ConfigError("pair indices must be non-negative")
        if self.lambda_similar < 0 or self.lambda_dissimilar < 0:
            raise ConfigError("semantic weights must be >= 0")

    def validate_range(self, n: int) -> None:
        for i, j in list(self.similar_pairs) + list(self.dissimilar_pairs):
            if i >= n or j >= n:
                raise ConfigError(f"pair index {max(i, j)} out of range for {n} objects")


@dataclass(frozen=True)
class OptimOptions:
    """Scaled-conjugate-gradient run settings."""

    max_iters: int = 200
    grad_tol: float = 1e-6
    obj_tol: float = 1e-10
    sigma0: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.grad_tol <= 0 or self.obj_tol <= 0 or self.sigma0 <= 0:
            raise ConfigError("optimizer tolerances must be > 0")


# Every accepted config key with (default, docstring).  Required keys have
# default _REQUIRED.  The CLI surfaces this table in --help.
_REQUIRED = object()

CONFIG_KEYS = {
    "schema_version": (_REQUIRED, "config schema version; must be 1"),
    "variant": (_REQUIRED, "model variant: " + ", ".join(VARIANTS)),
    "q": (_REQUIRED, "latent dimension (recommended range [7,10])"),
    "harmonization": (None, "penalty kind for hm-* variants: fnorm, l21 or trace"),
    "mu": (1.0, "harmonization weight, scalar (shared across modalities) or per-modality list"),
    "lambda_similar": (1.0, "weight of the similar-pair penalty (RSimGP variants)"),
    "lambda_dissimilar": (1.0, "weight of the dissimilar-pair hinge penalty (RSimGP variants)"),
    "pair_budget": (500, "max similar/dissimilar pairs sampled from labels (RSimGP variants)"),
    "M": (100, "active-set size (default 100)"),
    "gamma_x": (1.0, "latent-similarity bandwidth (default 1)"),
    "gamma_features": (None, "feature-similarity bandwidth(s); null = median heuristic"),
    "init": ("cca", "latent initialization: cca, pca or random"),
    "epochs": (1, "training epochs; one epoch = ceil(N/M) active-set rotations"),
    "inner_iters": (20, "SCG iterations per active-set rotation"),
    "grad_tol": (1e-6, "SCG gradient-norm stopping tolerance"),
    "obj_tol": (1e-10, "SCG relative objective-change stopping tolerance"),
    "sigma0": (1e-4, "SCG second-order step scale"),
    "seed": (0, "master seed for all randomness"),
    "active_policy": ("random", "active-set selection: random or farthest-point"),
    "include_latent_prior": (True, "apply the Gaussian latent prior (baseline variants only)"),
    "infer_full_set": (False, "MAP inference against the full training set instead of the active set"),
    "inference_starts": (1, "number of nearest-neighbor restarts for test-time MAP inference"),
    "inference_iters": (100, "SCG iterations per test-time MAP inference"),
}


@dataclass
class ModelConfig:
    """Validated model + training configuration."""

    variant: str
    q: int
    harmonization: str | None = None
    mu: tuple[float, ...] | float = 1.0
    lambda_similar: float = 1.0
    lambda_dissimilar: float = 1.0
    pair_budget: int = 500
    M: int = 100
    gamma_x: float = 1.0
    gamma_features: tuple[float, ...] | None = None
    init: str = "cca"
    epochs: int = 1
    inner_iters: int = 20
    grad_tol: float = 1e-6
    obj_tol: float = 1e-10
    sigma0: float = 1e-4
    seed: int = 0
    active_policy: str = "random"
    include_latent_prior: bool = True
    infer_full_set: bool = False
    inference_starts: int = 1
    inference_iters: int = 100
    semantic: SemanticConstraints | None = field(default=None, repr=False)

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.q < 1:
            raise ConfigError("q must be >= 1")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.epochs < 1 or self.inner_iters < 1:
            raise ConfigError("epochs and inner_iters must be >= 1")
        if self.gamma_x <= 0:
            raise ConfigError("gamma_x must be > 0")
        if self.init not in INIT_METHODS:
            raise ConfigError(f"unknown init {self.init!r}; expected one of {INIT_METHODS}")
        if self.active_policy not in ACTIVE_POLICIES:
            raise ConfigError(
                f"unknown active_policy {self.active_policy!r}; expected one of {ACTIVE_POLICIES}"
            )
        if self.pair_budget < 1:
            raise ConfigError("pair_budget must be >= 1")
        if self.inference_starts < 1 or self.inference_iters < 1:
            raise ConfigError("inference_starts and inference_iters must be >= 1")
        if isinstance(self.mu, (int, float)):
            self.mu = (float(self.mu), float(self.mu))
        else:
            self.mu = tuple(float(m) for m in self.mu)
        for m in self.mu:
            if not math.isfinite(m) or m < 0:
                raise ConfigError(f"mu must be finite and >= 0, got {m}")
        if self.gamma_features is not None:
            if isinstance(self.gamma_features, (int, float)):
                self.gamma_features = (float(self.gamma_features), float(self.gamma_features))
            else:
                self.gamma_features = tuple(float(g) for g in self.gamma_features)
            for g in self.gamma_features:
                if g <= 0:
                    raise ConfigError("gamma_features entries must be > 0")
        if self.lambda_similar < 0 or self.lambda_dissimilar < 0:
            raise ConfigError("lambda weights must be >= 0")

        if is_harmonized(self.variant):
            if self.harmonization is None:
                raise ConfigError(
                    f"variant {self.variant} requires a 'harmonization' kind "
                    f"(one of {HARMONIZATION_KINDS})"
                )
            # validates kind and weights
            HarmonizationSpec(self.harmonization, self.mu)
        elif self.harmonization is not None:
            raise ConfigError(f"variant {self.variant} does not accept a harmonization kind")

    def harmonization_spec(self) -> HarmonizationSpec | None:
        if not is_harmonized(self.variant):
            return None
        return HarmonizationSpec(self.harmonization, self.mu)

    def optim_options(self, max_iters: int | None = None) -> OptimOptions:
        return OptimOptions(
            max_iters=max_iters if max_iters is not None else self.inner_iters,
            grad_tol=self.grad_tol,
            obj_tol=self.obj_tol,
            sigma0=self.sigma0,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("semantic")
        d["schema_version"] = SCHEMA_VERSION
        d["mu"] = list(self.mu)
        if self.gamma_features is not None:
            d["gamma_features"] = list(self.gamma_features)
        return d


def config_from_dict(doc: dict) -> ModelConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = sorted(k for k, (dflt, _) in CONFIG_KEYS.items() if dflt is _REQUIRED and k not in doc)
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {doc['schema_version']!r}; expected {SCHEMA_VERSION}"
        )
    kwargs = {k: doc.get(k, dflt) for k, (dflt, _) in CONFIG_KEYS.items() if k != "schema_version"}
    return ModelConfig(**kwargs)


def load_config(path) -> ModelConfig:
    """Parse and validate a JSON config file into a ModelConfig."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        return config_from_dict(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
