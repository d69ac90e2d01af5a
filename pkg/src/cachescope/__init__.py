"""Trace-driven cache-miss profiler."""
