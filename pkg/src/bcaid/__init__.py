"""Literature-grounded annotation engine for brain cell-type marker gene sets."""

__version__ = "0.1.0"
