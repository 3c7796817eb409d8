"""Low-rank, sparse recurrent connectivity: cells, training, and spectral analysis."""

__version__ = "0.1.0"
