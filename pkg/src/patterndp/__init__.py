"""Pattern-level differential privacy for complex event processing streams."""

__version__ = "0.1.0"
