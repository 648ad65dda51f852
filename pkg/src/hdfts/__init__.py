"""Stability measures, FPCA deviation theory and sparse lagged/partially functional regression
for high-dimensional functional and scalar time series."""

__version__ = "0.1.0"

from .funcspace import BasisSpec, BlockKernel, Curve, FunctionalPanel, OperatorKernel  # noqa: E402
from .procgen import (ErrorSpec, LinearProcess, MAProcessSpec, MixedProcessSpec, RegressionScenario,  # noqa: E402
                      fma, gen_fllr_data, gen_pflr_data, simulate_fma, simulate_mixed, white_noise)
from .fpca import eigendecompose, sample_autocov, sample_cross_cov, score_cross_cov  # noqa: E402
from .spectral import (basu_measure, cross_stability, sparse_stability, stability_measure,  # noqa: E402
                       stability_report)
from .fllr import build_design, fit_path, lambda_max, solve_group_lasso  # noqa: E402
from .pflr import build_design_pflr, solve_mixed_lasso  # noqa: E402

__all__ = [
    "BasisSpec", "BlockKernel", "Curve", "FunctionalPanel", "OperatorKernel",
    "ErrorSpec", "LinearProcess", "MAProcessSpec", "MixedProcessSpec", "RegressionScenario",
    "fma", "gen_fllr_data", "gen_pflr_data", "simulate_fma", "simulate_mixed", "white_noise",
    "eigendecompose", "sample_autocov", "sample_cross_cov", "score_cross_cov",
    "basu_measure", "cross_stability", "sparse_stability", "stability_measure", "stability_report",
    "build_design", "fit_path", "lambda_max", "solve_group_lasso",
    "build_design_pflr", "solve_mixed_lasso",
]
