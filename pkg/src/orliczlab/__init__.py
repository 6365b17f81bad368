"""Orlicz N-function calculus, growth tensors, a periodic solver for the
symmetric and full-gradient phi-Laplacian evolution systems, and audits of
their interior Caccioppoli and Korn estimates."""

__version__ = "0.1.0"
