"""Vision-guided TCP positioning for flexible long-reach manipulators."""

__version__ = "0.1.0"
