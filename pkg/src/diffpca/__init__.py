"""Differential PCA toolkit: AAD dataset generation, spectral dimension
reduction on pathwise differentials, differential regression, and a
least-square Monte-Carlo pricer built on top."""

__version__ = "0.1.0"

from .autodiff import Recording
from .datagen import Dataset, RiskReportSet, generate, nested_risk_reports
from .dimred import Encoder, covariance, eigen_sym, fit, principal_angles
from .errors import (BudgetError, ConfigError, InstrumentModelMismatch,
                     NonFiniteError, NumericalError)
from .instruments import (BasketCall, BermudanPut, BermudanReceiver,
                          DeltaHedgedCall, EuropeanSwaption, ForwardContract,
                          SpreadCall, instrument_from_dict, instrument_to_dict)
from .lsm import (ExercisePolicy, continuation_study, fit_policy,
                  price_lower_bound)
from .models import (EquityModelConfig, RateModelConfig, five_factor_loadings,
                     model_from_dict, simulate_states)
from .regression import BasisSpec, RegressionModel, fit_differential, fit_value

__all__ = [
    "__version__",
    "Recording",
    "Dataset", "RiskReportSet", "generate", "nested_risk_reports",
    "Encoder", "covariance", "eigen_sym", "fit", "principal_angles",
    "BudgetError", "ConfigError", "InstrumentModelMismatch",
    "NonFiniteError", "NumericalError",
    "BasketCall", "BermudanPut", "BermudanReceiver", "DeltaHedgedCall",
    "EuropeanSwaption", "ForwardContract", "SpreadCall",
    "instrument_from_dict", "instrument_to_dict",
    "ExercisePolicy", "continuation_study", "fit_policy", "price_lower_bound",
    "EquityModelConfig", "RateModelConfig", "five_factor_loadings",
    "model_from_dict", "simulate_states",
    "BasisSpec", "RegressionModel", "fit_differential", "fit_value",
]
