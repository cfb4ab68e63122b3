"""Velocity estimation and tracking with binary derivative sensor networks."""
