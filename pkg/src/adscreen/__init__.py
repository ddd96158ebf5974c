"""Random-forest screening toolkit for tabular cohort data."""

__version__ = "0.1.0"
