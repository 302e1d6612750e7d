"""Unit-level small area estimation with misclassified categorical and
error-prone continuous covariates, fitted by Gibbs sampling."""

__version__ = "0.1.0"

from .gibbs import ChainConfig, ChainOutput, init_state, run_chain  # noqa: E402
from .model import Dataset, HyperParams, Mode, ParamState, validate_dataset  # noqa: E402
from .predict import predict_area_means, recover_categories, summarize  # noqa: E402
from .rng import RngStream  # noqa: E402
from .simulation import ScenarioConfig, run_scenario  # noqa: E402

__all__ = [
    "ChainConfig", "ChainOutput", "Dataset", "HyperParams", "Mode", "ParamState", "RngStream",
    "ScenarioConfig", "init_state", "predict_area_means", "recover_categories", "run_chain",
    "run_scenario", "summarize", "validate_dataset",
]
