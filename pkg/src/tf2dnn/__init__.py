"""Autoencoder speaker verification with tied session and speaker factors."""

__version__ = "0.1.0"
