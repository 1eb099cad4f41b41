"""Simulated electromagnetic side-channel attribute extraction.

Leakage simulator, SCAR1 trace files, a numpy 1D-CNN profiling attack,
TVLA and Grad-CAM, plus the experiment pipeline and CLI.
"""

__version__ = "0.1.0"
