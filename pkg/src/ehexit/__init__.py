"""Multi-exit inference on energy-harvesting devices: compression search,
intermittent-execution simulation and online exit selection."""

__version__ = "0.1.0"
