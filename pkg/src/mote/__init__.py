"""Per-identity model templates for privacy-aware face verification."""

from .enroll import EnrollmentConfig, enroll_identity
from .kde import KdeModel, fit_kde, synth_templates
from .net import Mlp, TrainConfig, train
from .store import ModelTemplate, load_model_template, save_model_template
from .verify import decide, score

__version__ = "0.1.0"

__all__ = [
    "EnrollmentConfig", "KdeModel", "Mlp", "ModelTemplate", "TrainConfig",
    "decide", "enroll_identity", "fit_kde", "load_model_template", "save_model_template",
    "score", "synth_templates", "train",
]
