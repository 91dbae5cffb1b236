"""Localized energy-flux diagnostics for 3-D incompressible flows.

Builds refined cutoffs and ball/shell coverings of ``B(0, R0)``, computes
localized energy, enstrophy and flux with their time-space ensemble averages,
and checks the two-sided cascade and locality bounds on sampled flows.
"""
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
