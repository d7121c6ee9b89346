"""Neural-network pulse control for qubit-cavity cat-state preparation."""

__version__ = "0.1.0"
