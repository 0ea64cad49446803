"""Streaming source codes for burst-erasure links.

Exact rate calculators for Markov sources, lookahead rearrangement plus
linear binning for structured binary sources, and a layered quantizer
pipeline for Gaussian streams, with erasure-channel simulation harnesses.
"""

from __future__ import annotations

__version__ = "0.1.0"
