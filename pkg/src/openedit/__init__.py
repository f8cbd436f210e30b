"""Text-guided image editing on a synthetic shapes corpus."""

__version__ = "0.1.0"
