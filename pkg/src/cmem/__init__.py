"""Cross-modal generation through auto-encoders whose latent spaces are tied together.

Submodules:

- ``cmem.nn``: layers, losses, Adam and reverse-mode gradients
- ``cmem.datasets``: IDX parsing and double / colored-double digit corpora
- ``cmem.embeddings``: token tables and MFCC speech features
- ``cmem.image_models``: the four image auto-encoders
- ``cmem.mapping``: the constrained latent mapping and latent-swap inference
- ``cmem.baseline``: direct embedding-to-pixel regression
- ``cmem.evaluation``: nearest-image PSNR, reports and image grids
- ``cmem.pipeline`` / ``cmem.cli``: end-to-end orchestration
"""

__version__ = "0.1.0"

from . import baseline, datasets, embeddings, evaluation, image_models, kernels, mapping, nn, weights  # noqa: E402

__all__ = [
    "baseline",
    "datasets",
    "embeddings",
    "evaluation",
    "image_models",
    "kernels",
    "mapping",
    "nn",
    "weights",
]
