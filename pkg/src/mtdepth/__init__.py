"""Single-image depth estimation trained as joint regression +
depth-interval classification with learned uncertainty task weighting.

Subpackages:

- ``autodiff``   reverse-mode AD engine over dense float64 arrays
- ``depthspace`` metric <-> normalized-log depth and interval labels
- ``losses``     sparse task losses, SILog metric, task weighting
- ``model``      micro shared-encoder / dual-decoder network
- ``optim``      Adam, polynomial decay, LR range test
- ``data``       synthetic scenes, KITTI depth PNGs, augmentation, batching
- ``harness``    training loop, validation, ablations, checkpoints
- ``cli``        command-line interface (``mtdepth ...``)
"""

from . import autodiff, data, depthspace, harness, losses, model, optim
from .depthspace import (
    ClipPlanes,
    DepthBounds,
    DepthMap,
    IntervalLabeling,
    IntervalScheme,
    decode_depth,
    dequantize,
    encode_depth,
    label_map,
    quantize,
)
from .harness import ExperimentConfig, run_ablation, train, validate
from .losses import SilogResult, TaskWeights, silog
from .model import Model, ModelConfig, build

__version__ = "0.1.0"

__all__ = [
    "autodiff", "data", "depthspace", "harness", "losses", "model", "optim",
    "DepthBounds", "ClipPlanes", "IntervalScheme", "DepthMap", "IntervalLabeling",
    "encode_depth", "decode_depth", "quantize", "dequantize", "label_map",
    "ExperimentConfig", "train", "validate", "run_ablation",
    "TaskWeights", "SilogResult", "silog",
    "Model", "ModelConfig", "build",
    "__version__",
]
