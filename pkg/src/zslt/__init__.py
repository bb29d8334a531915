"""Cross attribute-guided transformers for zero-shot classification."""

from .numerics import Tensor, GradTape, AdamState, backward_grads, adam_step
from .avt import AttributeVocabulary
from .objectives import ClassSemanticBank, LossWeights
from .model import ModelConfig, ModelDims, ModelState, init_model
from .data_io import DatasetBundle, SyntheticSpec, generate_synthetic
from .metrics import evaluate, harmonic_mean, fuse_predict

__version__ = "0.1.0"
