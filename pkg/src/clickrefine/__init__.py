"""Click-to-box refinement and single-object tracking toolkit."""

__version__ = "0.1.0"
