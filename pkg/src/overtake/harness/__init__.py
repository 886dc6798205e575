"""Command-line harness: scenarios, synthetic logs, evaluation, plotting."""
