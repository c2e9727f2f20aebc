"""Learning inflation expectations with an actor-critic agent in a money-in-utility economy."""

__version__ = "0.1.0"
