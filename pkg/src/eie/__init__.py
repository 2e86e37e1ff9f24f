"""Change-summary generation for paired chest X-rays with expert guidance tokens."""

__version__ = "0.1.0"
