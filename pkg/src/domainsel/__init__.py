"""Cross-domain source selection for text-pair similarity tasks."""

__version__ = "0.1.0"
