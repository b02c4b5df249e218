"""Learn per-line coding-practice classifiers from linter examples and measure how they hold up."""

__version__ = "0.1.0"
