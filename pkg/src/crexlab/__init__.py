"""Desk-scale laboratory for contrastive referring-expression counting."""

__version__ = "0.1.0"

FORMAT_VERSION = 1
