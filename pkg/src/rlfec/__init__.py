"""Discrete-event simulator of LTP file transfer over FEC-protected deep-space
links, with fixed, feedback-adaptive and reinforcement-learning code-rate
controllers."""

__version__ = "0.1.0"
