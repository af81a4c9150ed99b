"""Test-time prompt search for text-to-image generation."""

__version__ = "0.1.0"
