# Package metadata for valid-testgen.
"""Valid test input generation and out-of-distribution screening for DNN testing."""

__all__ = ["__version__"]
__version__ = "0.1.0"
