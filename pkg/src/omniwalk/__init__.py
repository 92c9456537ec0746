"""Omnidirectional velocity-commanded locomotion learning with PPO and beta policies."""

__version__ = "0.1.0"
