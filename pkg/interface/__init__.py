"""Command-line entry points of the GPU memory hierarchy simulator."""
