"""Versioned text assets (prompt templates, reference results)."""
