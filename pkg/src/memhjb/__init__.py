"""Optimal control of state equations with memory."""
