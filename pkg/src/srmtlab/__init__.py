"""srmtlab: shared-recurrent-memory multi-agent pathfinding laboratory."""

__version__ = "0.1.0"
