"""Day-ahead scheduling of power-to-X plants trading off electricity price against CO2 intensity."""

__version__ = "0.1.0"
