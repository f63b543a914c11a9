from app.pipeline.experiment import Experiment, RunRecord
from app.pipeline.experiment_config import ExperimentConfig, PRESETS, load_config, resolve_config
