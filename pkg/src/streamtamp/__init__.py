"""Stream-based task and motion planning with learned best-first stream expansion."""

__version__ = "0.1.0"
