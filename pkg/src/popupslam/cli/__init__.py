from .config import PipelineConfig, load_config
from .pipeline import PipelineResult, run_pipeline

__all__ = ["PipelineConfig", "load_config", "PipelineResult", "run_pipeline"]
