"""Feed-forward multi-view intrinsic image decomposition toolkit."""

__version__ = "0.1.0"
