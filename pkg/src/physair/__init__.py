"""Physics-guided, interpretable spatiotemporal air-quality forecasting."""

__version__ = "0.1.0"
