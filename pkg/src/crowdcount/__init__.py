"""Multi-view crowd counting from corner statistics and head detection."""

__version__ = "0.1.0"
