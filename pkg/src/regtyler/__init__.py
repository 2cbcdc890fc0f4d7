"""Regularized Tyler scatter estimation.

Tyler's robust scatter estimator, its Wiesel and KL shrinkage variants with
MM solvers, exact existence checks, structure-constrained estimation,
shrinkage tuning, Monte-Carlo benchmarks and a minimum-variance backtest.
"""

__version__ = "0.1.0"
