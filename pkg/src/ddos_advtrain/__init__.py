"""Adversarial training workbench for flow-based DDoS detectors."""

__version__ = "0.1.0"
