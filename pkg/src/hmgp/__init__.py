"""Harmonized multimodal Gaussian process latent variable models.

A shared latent space and per-modality RBF kernel hyperparameters are
learned jointly by MAP, with optional agreement penalties coupling each
modality's GP kernel to the similarity of latent positions.  Includes MAP
inference for unseen queries and a cross-modal retrieval evaluation suite.
"""

from .config import (
    HarmonizationSpec,
    ModelConfig,
    OptimOptions,
    SemanticConstraints,
    load_config,
)
from .dataio import DatasetBundle, Split, generate_synthetic, read_matrix, write_matrix
from .errors import ConfigError, DataError, HmgpError, NumericalError
from .evaluation import (
    average_precision,
    cross_modal_report,
    divergence_report,
    mean_ap,
    precision_recall,
    rank_by_distance,
    riemannian_distance,
)
from .kernels import (
    RbfHyperparams,
    feature_similarity,
    latent_similarity,
    rbf_kernel,
    safe_cholesky,
)
from .model import (
    TrainedModel,
    cca_initialize,
    embed_test_set,
    infer_latent,
    load_model,
    save_model,
    train,
)
from .objectives import (
    ObjectiveData,
    gaussian_latent_prior,
    harmonization_loss,
    model_gradient,
    model_objective,
    nll_gplvm,
    nll_simgp,
    semantic_penalty,
)
from .optimizer import OptimTrace, check_gradients, scg_minimize, select_active_set

__version__ = "0.1.0"
