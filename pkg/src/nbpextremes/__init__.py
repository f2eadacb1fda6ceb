"""Detection and driver attribution of extremes in net biospheric productivity."""

__version__ = "0.1.0"
