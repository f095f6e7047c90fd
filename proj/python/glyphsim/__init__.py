"""Python access to the glyphsim library."""

import torch  # noqa: F401  (loads libtorch before the extension)

from ._glyphsim import (
    ConfigError,
    InvalidInput,
    MissingArtifact,
    ShapeError,
    __version__,
    agglomerate,
    bonferroni,
    cohens_d,
    contrastive_loss,
    cosine_distances,
    effect_label,
    half_pairing,
    pca,
    run_cli,
    tsne,
    welch_t,
)

__all__ = [
    "ConfigError",
    "InvalidInput",
    "MissingArtifact",
    "ShapeError",
    "__version__",
    "agglomerate",
    "bonferroni",
    "cohens_d",
    "contrastive_loss",
    "cosine_distances",
    "effect_label",
    "half_pairing",
    "pca",
    "run_cli",
    "tsne",
    "welch_t",
]
