"""HTTP service wrapping the measurement pipeline."""
