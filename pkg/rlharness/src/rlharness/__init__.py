"""Training layer over the sand shaping environment."""

__version__ = "0.1.0"

from .bindings import (BindingConfig, BindingVersionError, EnvBinding,
                       VecEnvHandle, bind_env, require_core)
from .encoder import (OUTPUT_DIM, GatedHeightmapEncoder, PlainCnnEncoder,
                      make_encoder)
from .training import (Trainer, TrainingConfig, TrainingDiverged,
                       evaluate_policy, load_checkpoint,
                       random_baseline_returns, train)
