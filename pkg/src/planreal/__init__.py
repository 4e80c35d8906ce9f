"""Plan realization engine."""

__version__ = "0.1.0"
