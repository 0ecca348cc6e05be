"""Gridworld policy training, rule-based summarization and guardrails."""

__version__ = "0.1.0"
