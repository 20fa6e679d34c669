"""Burst HDR synthesis, classical restoration and evaluation."""
