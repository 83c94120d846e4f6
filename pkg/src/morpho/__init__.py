"""Statistical shape analysis with confounder handling for two-class studies."""

__version__ = "0.1.0"
