"""Two-sided (left/right neighbor) green-list watermarking for diffusion-style
decoding, with a desk-scale decoder simulator, calibrated detection,
baselines, attacks and an experiment harness."""
from .errors import (AttackError, ConfigError, DataError, DomainError, InputError, LRDWMError, ResourceError,
                     UsageError)
from .vocab_hash import GreenMask, Vocabulary, WatermarkKey, green_mask, green_table, is_green
from .inject import BiasReport, BoundaryMode, InjectorConfig, LRInjector, inject
from .detector import DetectionResult, NullCalibration, TokenScore, calibrate_null, detect, score_tokens, z_statistic

__version__ = "0.1.0"

__all__ = [
    "AttackError", "BiasReport", "BoundaryMode", "ConfigError", "DataError", "DetectionResult", "DomainError",
    "GreenMask", "InjectorConfig", "InputError", "LRDWMError", "LRInjector", "NullCalibration", "ResourceError",
    "TokenScore", "UsageError", "Vocabulary", "WatermarkKey", "calibrate_null", "detect", "green_mask",
    "green_table", "inject", "is_green", "score_tokens", "z_statistic", "__version__",
]
