"""Globally stabilizing suboptimal controller synthesis for polynomial systems.

Sum-of-squares relaxed policy iteration compiled to semidefinite programs,
with a model-free online variant driven by simulated trajectory data.
"""

__version__ = "0.1.0"
