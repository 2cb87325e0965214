"""File formats, configuration parsing and small helpers."""
