"""Multi-label image classification by max pooling a shared CNN's class
scores over object hypotheses.

Stages: objectness proposals -> hypotheses selection (normalized cuts) ->
shared CNN (pre-train, image fine-tune, hypothesis fine-tune) -> pooled
prediction -> average precision.
"""

from .boxes import BoundingBox, iou
from .config import Config
from .errors import (
    CheckpointFormatError, ConfigError, DataError, DegenerateInputError, HCPError, ShapeError,
    StageMismatchError,
)
from .evaluation import average_precision, mean_ap
from .hselect import HSConfig, normalized_cut, select_hypotheses
from .kernels import BACKEND
from .manifest import DatasetManifest
from .model import (
    StageConfig, build_shared_cnn, fuse_max, hypothesis_fine_tune, image_fine_tune, late_fusion,
    predict_image, pretrain,
)
from .objectness import ObjectnessConfig, generate_proposals, recall_evaluation, train_objectness
from .synth import SyntheticSpec, gen_synthetic

__version__ = "0.1.0"
