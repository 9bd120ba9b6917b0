"""Solar panel surface-fault classification and severity triage."""

from .evaluation import EvaluationReport, evaluate, stratified_split
from .features import FeatureVector, extract_features, segment_defect
from .imaging import AugmentationConfig, RgbImage, augment, load_image, normalize, resize_bilinear
from .severity import (
    ForestConfig, RandomForestModel, SeverityGrade, fit_forest, grade, load_forest, predict_score, save_forest,
)
from .taxonomy import DefectClass
from .vit import (
    OptimizerConfig, ViTConfig, ViTModel, export_weights, import_weights, init_model, predict, predict_proba, train,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentationConfig", "DefectClass", "EvaluationReport", "FeatureVector", "ForestConfig", "OptimizerConfig",
    "RandomForestModel", "RgbImage", "SeverityGrade", "ViTConfig", "ViTModel", "augment", "evaluate",
    "export_weights", "extract_features", "fit_forest", "grade", "import_weights", "init_model", "load_forest",
    "load_image", "normalize", "predict", "predict_proba", "predict_score", "resize_bilinear", "save_forest",
    "segment_defect", "stratified_split", "train",
]
