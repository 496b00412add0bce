"""Safe-corridor annotation, corridor losses and corridor-constrained differentiable planning."""

__version__ = "0.1.0"
