"""Stepchart generation toolkit.

Parses and writes .sm simfiles, extracts beat-aligned log-mel audio
features, estimates tempo, trains step placement and step selection
models on a from-scratch autodiff stack, and drives the whole thing
from a single command line entry point.
"""

__version__ = "0.1.0"
