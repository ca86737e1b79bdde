"""Poverty targeting from phone metadata: indicators, wealth measures, learners
and quota-based targeting evaluation."""

__version__ = "0.1.0"
