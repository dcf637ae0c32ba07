"""From-scratch multi-person pose estimation with channel shuffling and attention bottlenecks."""

__version__ = "0.1.0"
