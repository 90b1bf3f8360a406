"""Bi-temporal change detection with credibility-gated branch interaction
and patch-mode joint feature fusion, on a self-contained autodiff engine."""

__version__ = "0.1.0"
