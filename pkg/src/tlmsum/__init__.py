"""Extract-then-abstract summarization: sentence extractors, a transformer language model and evaluation tools."""

__version__ = "0.1.0"
