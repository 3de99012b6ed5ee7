"""Human-to-humanoid upper-body pose generation and retargeting toolkit."""

__version__ = "0.1.0"
