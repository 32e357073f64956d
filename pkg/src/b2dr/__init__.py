"""Deterministic closed-loop driving simulation: a reactive behavioral
controller rolls the world forward while pluggable renderer backends produce
per-step surround images for planner agents."""

__version__ = "0.1.0"
