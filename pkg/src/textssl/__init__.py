"""Semi-supervised glyph-word recognition with hierarchical consistency training."""

__version__ = "0.1.0"
