"""Multi-task product ranking over an impression -> click -> add-to-cart ->
purchase funnel, on a small numpy reverse-mode engine."""

__version__ = "0.1.0"
