"""Active learning for collaborative filtering with an aspect model and a Dirichlet posterior."""

from .active_user import ActiveUserState, DirichletParams, digamma, dirichlet_posterior, fast_update, fold_in
from .aspect_model import AspectModel, TrainConfig, load_model, log_likelihood, predict_rating, save_model, train_em
from .dataset import Dataset, generate_synthetic, load_dataset, normalize, split_protocol
from .harness import ExperimentConfig, ResultsTable, load_config, run_experiment, run_session
from .strategies import StrategyKind, loss_bayesian, mc_expected_loss, select_item

__version__ = "0.1.0"

__all__ = [
    "ActiveUserState", "AspectModel", "Dataset", "DirichletParams", "ExperimentConfig", "ResultsTable",
    "StrategyKind", "TrainConfig", "digamma", "dirichlet_posterior", "fast_update", "fold_in",
    "generate_synthetic", "load_config", "load_dataset", "load_model", "log_likelihood", "loss_bayesian",
    "mc_expected_loss", "normalize", "predict_rating", "run_experiment", "run_session", "save_model",
    "select_item", "split_protocol", "train_em",
]
