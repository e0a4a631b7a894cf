from .base import EffectClass, FitError, ModelFit, classify_effect, classify_interval, wald_ci, wald_interval
from .families import Family, make_family
from .gaussian import fit_gaussian_log, fit_linear_treatment, gaussian_log_row_loglik, linear_row_loglik
from .ordinal import ensemble_row_loglik, fit_prop_odds, fit_strat_prop_odds_ensemble, prop_odds_row_loglik
from .survival import cox_partial_loglik, cox_residuals, fit_cox, fit_weibull, weibull_row_loglik

__all__ = [
    "EffectClass", "FitError", "ModelFit", "classify_effect", "classify_interval", "wald_ci",
    "wald_interval", "Family", "make_family", "fit_gaussian_log", "fit_linear_treatment",
    "gaussian_log_row_loglik", "linear_row_loglik", "ensemble_row_loglik", "fit_prop_odds",
    "fit_strat_prop_odds_ensemble", "prop_odds_row_loglik", "cox_partial_loglik", "cox_residuals",
    "fit_cox", "fit_weibull", "weibull_row_loglik",
]
