"""Simulation and verification toolkit for the Viana skew product."""
