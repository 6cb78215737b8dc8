"""Integrated sidelobe cancellation and linear prediction (ISCLP) Kalman filter."""

__version__ = "0.1.0"
