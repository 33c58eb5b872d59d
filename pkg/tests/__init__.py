"""Tests for the GPU memory hierarchy simulator."""
