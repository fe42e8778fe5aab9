"""Scenario loading, experiment sweeps, result files, figures and the CLI."""
