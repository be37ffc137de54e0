"""Staggered phase-field fracture simulator."""
