"""
Bayesian mixtures of multivariate normal-inverse Gaussian distributions,
fitted by Gibbs sampling.
"""

from importlib import resources
import json

from .distributions import make_rng
from .mnig import Dataset, MixtureModel, MNIGComponent, generate_dataset, mixture_loglik, mnig_logpdf
from .gibbs import FitResult, GibbsConfig, PriorSpec, fit
from .selection import adjusted_rand_index, select_model

__all__ = [
    "Dataset",
    "MixtureModel",
    "MNIGComponent",
    "GibbsConfig",
    "PriorSpec",
    "FitResult",
    "fit",
    "select_model",
    "adjusted_rand_index",
    "generate_dataset",
    "mixture_loglik",
    "mnig_logpdf",
    "make_rng",
    "load_bundled_model",
]

__version__ = "0.1.0"

BUNDLED_MODELS = ("table1", "table2")


def load_bundled_model(name):
    """Generating parameters shipped with the package (``"table1"`` or ``"table2"``)."""
    if name not in BUNDLED_MODELS:
        raise KeyError(f"unknown bundled model {name!r}; choose from {BUNDLED_MODELS}")
    text = resources.files(__package__).joinpath("data", f"{name}.json").read_text()
    return MixtureModel.from_dict(json.loads(text))
