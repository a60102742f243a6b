"""Multi-network packet routing: link predictors, network selection and replay simulation."""

__version__ = "0.1.0"
