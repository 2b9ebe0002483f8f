"""Contrastive representation learning and latent-space analytics for phenotype screens."""

__version__ = "0.1.0"

from .analytics import (  # noqa: E402
    PCA2,
    CenterSet,
    ClassCenterModel,
    EmbeddingSet,
    SimilarityMatrix,
    anomaly_scores,
    center_similarity,
    class_centers,
    concentration_gradient,
    detect_novel,
    drift_score,
    mean_similarity_matrix,
    pairwise_stats,
    pca2,
)
from .contrastive import (  # noqa: E402
    ContrastiveConfig,
    ContrastiveEncoder,
    nt_xent_grad,
    nt_xent_loss,
    nt_xent_loss_and_grad,
    train_ssl,
)
from .data import (  # noqa: E402
    AugmentPolicy,
    SyntheticConfig,
    augment,
    generate_dataset,
    images_to_matrix,
    make_views,
)
from .probe import LinearProbe, ProbeConfig, class_weights, evaluate, train_probe  # noqa: E402

__all__ = [
    "PCA2",
    "AugmentPolicy",
    "CenterSet",
    "ClassCenterModel",
    "ContrastiveConfig",
    "ContrastiveEncoder",
    "EmbeddingSet",
    "LinearProbe",
    "ProbeConfig",
    "SimilarityMatrix",
    "SyntheticConfig",
    "anomaly_scores",
    "augment",
    "center_similarity",
    "class_centers",
    "class_weights",
    "concentration_gradient",
    "detect_novel",
    "drift_score",
    "evaluate",
    "generate_dataset",
    "images_to_matrix",
    "make_views",
    "mean_similarity_matrix",
    "nt_xent_grad",
    "nt_xent_loss",
    "nt_xent_loss_and_grad",
    "pairwise_stats",
    "pca2",
    "train_probe",
    "train_ssl",
]
