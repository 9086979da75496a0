import os
import sys

# Tests import shared builders from helpers.py next to this file.
sys.path.insert(0, os.path.dirname(__file__))
