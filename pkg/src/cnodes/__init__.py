"""Neural ODEs and characteristic neural ODEs on a small numpy autodiff core."""

__version__ = "0.1.0"
