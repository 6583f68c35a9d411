from .config import ExperimentConfig, load_config, parse_config
from .runner import run_experiment
