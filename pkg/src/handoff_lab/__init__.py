"""Retrieval dialog model plus a REINFORCE-trained handoff classifier that routes turns to a human."""

__version__ = "0.1.0"
