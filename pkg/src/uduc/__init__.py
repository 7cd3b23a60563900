"""Contrastive (UDUC) training of probabilistic dynamics ensembles, CEM-MPC and robustness sweeps."""
from .config import CemConfig, ConfigError, ExperimentConfig, load_config, parse_config, validate_config
from .ensemble import Ensemble, MlpMember, PhysicsMember, load_checkpoint, save_checkpoint
from .env import NOMINAL, PhysicsParams, make_env, make_grid
from .losses import LossBreakdown, batch_objective, info_nce, pe_loss, uduc_loss
from .rng import SeededRng, derive_rng
from .robustness import evaluate_sweep, make_baseline_ensemble, robust_auc
from .trainer import run_training

__version__ = "0.1.0"

__all__ = ["CemConfig", "ConfigError", "Ensemble", "ExperimentConfig", "LossBreakdown", "MlpMember", "NOMINAL",
           "PhysicsMember", "PhysicsParams", "SeededRng", "batch_objective", "derive_rng", "evaluate_sweep",
           "info_nce", "load_checkpoint", "load_config", "make_baseline_ensemble", "make_env", "make_grid",
           "parse_config", "pe_loss", "robust_auc", "run_training", "save_checkpoint", "uduc_loss",
           "validate_config"]
