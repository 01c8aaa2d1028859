"""Command-line pipeline: config, provenance stamps and stage runners."""
from .config import PipelineConfig, load_config
from .main import main
from .stages import COMMANDS, PIPELINE, run_all
