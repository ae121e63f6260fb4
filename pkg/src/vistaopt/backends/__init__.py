from .base import Backend, GenerationRequest, RoleRouter
from .http import HttpBackend
from .synthetic import (
    SyntheticBackend,
    SyntheticWorldConfig,
    extract_features,
    make_synthetic_dataset,
    prompt_skill,
    synthetic_base_answer,
    synthetic_reflect,
)

__all__ = [
    "Backend",
    "GenerationRequest",
    "RoleRouter",
    "HttpBackend",
    "SyntheticBackend",
    "SyntheticWorldConfig",
    "extract_features",
    "make_synthetic_dataset",
    "prompt_skill",
    "synthetic_base_answer",
    "synthetic_reflect",
]
