"""Mode-based firmware debloating: per-mode function allowlists and their runtime enforcement."""

__version__ = "0.1.0"
