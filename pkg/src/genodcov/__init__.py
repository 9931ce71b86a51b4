"""Distance-covariance tests for genotype data with closed-form null distributions."""

__version__ = "0.1.0"
