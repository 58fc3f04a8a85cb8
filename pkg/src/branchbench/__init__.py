"""branchbench: compare restart/continue/checkpoint strategies for branched sessions."""

__version__ = "0.1.0"
