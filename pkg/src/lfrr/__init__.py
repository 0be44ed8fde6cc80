"""Light-field raindrop removal by learned 4D re-sampling and residual refinement."""

from .errors import LFRRError
from .lightfield import LightField
from .network import Ablation, Model, ModelConfig
from .config import TrainConfig

__all__ = ["LFRRError", "LightField", "Ablation", "Model", "ModelConfig", "TrainConfig"]
__version__ = "0.1.0"
