"""Decentralized per-OSC I/O autotuning on a simulated Lustre-like client path."""

__version__ = "0.1.0"
