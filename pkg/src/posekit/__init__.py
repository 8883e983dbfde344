"""Species-independent pose tracking and behavioral analysis toolkit.

Modules are imported individually (``posekit.pose``, ``posekit.filters``,
``posekit.pipeline``, ...); nothing heavyweight loads at package import.
"""

__version__ = "0.1.0"
