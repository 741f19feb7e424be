"""Distributed kernel ridge regression on alpha-mixing sequences.

The modules build on each other in this order: ``kernelspec`` (kernels,
spectra, ground-truth targets), ``sequencegen`` (dependent samples),
``krr`` and ``dkrr`` (estimators), ``spectraldiag`` (operator diagnostics)
and ``harness`` (sweeps and rate fits).
"""

__version__ = "0.1.0"

from .errors import ConfigError, InputError, MixkrrError, NumericError, ParseError
from .kernelspec import (
    KernelSpec,
    SpectralModel,
    TargetFunction,
    brownian_kernel,
    brownian_spectral_model,
    gaussian_kernel,
    synthesize_target,
)
from .sequencegen import Dataset, derive_seed, generate, load_dataset, save_dataset
from .krr import KrrModel, error_norms, fit, predict
from .dkrr import DkrrEnsemble, fit_distributed, lambda_rule, max_machines, partition_tandem
from .spectraldiag import effective_dimension

__all__ = [
    "__version__",
    "ConfigError", "InputError", "MixkrrError", "NumericError", "ParseError",
    "KernelSpec", "SpectralModel", "TargetFunction",
    "brownian_kernel", "brownian_spectral_model", "gaussian_kernel", "synthesize_target",
    "Dataset", "derive_seed", "generate", "load_dataset", "save_dataset",
    "KrrModel", "error_norms", "fit", "predict",
    "DkrrEnsemble", "fit_distributed", "lambda_rule", "max_machines", "partition_tandem",
    "effective_dimension",
]
