"""Count-based exploration bonuses from coin-flip regression."""

__version__ = "0.1.0"
