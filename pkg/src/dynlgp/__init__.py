"""Dynamic logic-geometric programming for human-robot collaborative table setting."""

__version__ = "0.1.0"
