"""aisf: amodal instance segmentation mask head with a transformer decoder.

A self-contained training/evaluation stack: a small reverse-mode autodiff
engine, ROI feature encoding, learnable mask-query decoding, invisible-mask
embedding, per-pixel mask prediction, synthetic occlusion data, COCO-style
AP/AR scoring and a CLI tying it together.
"""

from aisf.autograd import ParameterSet, Tensor, backward, no_grad, sgd_step
from aisf.config import RunConfig
from aisf.encoding import BoundingBox
from aisf.model import Model, forward_full

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "Model",
    "ParameterSet",
    "RunConfig",
    "Tensor",
    "backward",
    "forward_full",
    "no_grad",
    "sgd_step",
    "__version__",
]
