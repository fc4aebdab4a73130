"""Shared-spectrum link simulator: chain decoding over a Type-I HARQ primary."""

__version__ = "0.1.0"
