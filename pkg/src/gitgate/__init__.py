"""gitgate: admission-controlled Git smart-HTTP intake.

External git repositories are fetched through a gateway that resolves every
request to an immutable identity, records a durable policy event before any
capability is granted, and serves approved artifacts from a pinned two-tier
mirror cache.
"""

__version__ = "0.1.0"
