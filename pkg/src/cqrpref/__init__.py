"""Self-consistency preference data construction for conversational query rewriting."""

__version__ = "0.1.0"
