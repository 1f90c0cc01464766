"""Automated multi-task learning for sequence classification."""
