"""Distribution kernels and critical values."""

from .bivariate import bvn_cdf, bvt_cdf
from .chibar import fqlr_cdf, fqlr_quantile, kudo_weights, orthant_prob
from .critical import CriticalValueRequest, Method, Regime, critical_value, critical_values
from .maxdist import mvn_rect_prob, mvt_max_cdf, mvt_max_quantile, mvt_rect_prob
from .qmc import QmcConfig
from .scalar import f_tail, norm_cdf, norm_quantile, t_cdf, t_quantile

__all__ = [
    "CriticalValueRequest",
    "Method",
    "QmcConfig",
    "Regime",
    "bvn_cdf",
    "bvt_cdf",
    "critical_value",
    "critical_values",
    "f_tail",
    "fqlr_cdf",
    "fqlr_quantile",
    "kudo_weights",
    "mvn_rect_prob",
    "mvt_max_cdf",
    "mvt_max_quantile",
    "mvt_rect_prob",
    "norm_cdf",
    "norm_quantile",
    "orthant_prob",
    "t_cdf",
    "t_quantile",
]
