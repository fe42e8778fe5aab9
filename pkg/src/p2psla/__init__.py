"""Peer-steered activation of active measurement sessions for SLA violation detection."""

__version__ = "0.1.0"
