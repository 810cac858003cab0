"""Desk-scale hybrid HMM/DNN speech recognition toolkit."""
__version__ = "0.1.0"
