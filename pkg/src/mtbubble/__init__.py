"""Bubbling solutions of the Moser-Trudinger equation on flat rectangular tori."""

__version__ = "0.1.0"
