"""Probabilistic approximate logic: soft first-order theories compiled to
differentiable computation graphs over learnable groundings."""

__version__ = "0.1.0"
