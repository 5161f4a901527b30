"""Sequential key-value memory networks (SKVMN) for knowledge tracing."""

__version__ = "0.1.0"
