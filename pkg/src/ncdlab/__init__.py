"""Desk-scale novel class discovery lab.

A trainable encoder with two classifier heads, feature-queue contrastive
losses with pseudo-positive mining, mixing-based hard negative synthesis,
and Hungarian-matched clustering evaluation, exercised on seeded
synthetic datasets.
"""

from .backends import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
