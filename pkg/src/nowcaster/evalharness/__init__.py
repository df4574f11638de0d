"""Evaluation: metrics, synthetic panels, vintage backtests and reports."""
from .backtest import (BacktestResult, BacktestSetup, ExperimentResult, VintageCache, backtest,
                       build_vintage, feature_sampling_experiment, sample_features)
from .metrics import mae, rmse, stars, t_test_one_tailed
from .report import (BacktestReport, format_table, report_from_backtest, report_from_experiment,
                     write_ratios_csv, write_report_csv)
from .synthetic import SyntheticData, SyntheticSpec, generate_synthetic

__all__ = ["BacktestResult", "BacktestSetup", "ExperimentResult", "VintageCache", "backtest",
           "build_vintage", "feature_sampling_experiment", "sample_features", "mae", "rmse", "stars",
           "t_test_one_tailed", "BacktestReport", "format_table", "report_from_backtest",
           "report_from_experiment", "write_ratios_csv", "write_report_csv", "SyntheticData",
           "SyntheticSpec", "generate_synthetic"]
