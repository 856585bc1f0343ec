"""Tools for chronologically consistent LLM evaluation and backtesting."""

__version__ = "0.1.0"
