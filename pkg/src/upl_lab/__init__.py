"""Streaming transducer ASR latency lab: synthetic corpus, transducer losses,
chunked beam decoding on a virtual clock, endpointers and latency metrics."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
