"""Growth, retention, campaign-effectiveness and app-risk analytics."""

__version__ = "0.1.0"
