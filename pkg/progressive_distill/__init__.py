from .curriculum import Schedule, StageSpec, ablate, default_schedule, validate_schedule
from .losses import latent_loss, stage_loss
from .trainer import run_pipeline, train_stage
from .transformer import ModelConfig, encoder_forward, param_count

__version__ = "0.1.0"
