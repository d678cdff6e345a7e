"""
chainlab package initialization.
"""

from .logger import get_logger

__version__ = "0.1.0"
