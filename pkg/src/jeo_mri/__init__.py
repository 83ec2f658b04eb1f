"""Joint edge optimization deep-unfolding reconstruction for undersampled MRI."""

__version__ = "0.1.0"
